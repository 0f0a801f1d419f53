//! Standard normal distribution functions that stay finite deep in the
//! lower tail, and truncated normal sampling.

use rand::Rng as _;
use statrs::function::erf::{erfc, erfc_inv};

use crate::rng::Rng;

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_7;

/// `log φ(x)`.
pub fn ln_pdf(x: f64) -> f64 {
    -0.5 * x * x - LN_SQRT_2PI
}

/// `Φ(x)`.
pub fn cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// `log Φ(x)`, using the asymptotic Mills-ratio series below `x = −20`.
pub fn ln_cdf(x: f64) -> f64 {
    if x.is_nan() {
        return f64::NAN;
    }
    if x >= -20.0 {
        if x > 5.0 {
            return (-0.5 * erfc(x / std::f64::consts::SQRT_2)).ln_1p();
        }
        return cdf(x).ln();
    }
    if x == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let z = 1.0 / (x * x);
    let series = 1.0 - z * (1.0 - z * (3.0 - z * (15.0 - z * 105.0)));
    ln_pdf(x) - (-x).ln() + series.ln()
}

/// `Φ⁻¹(p)`.
pub fn quantile(p: f64) -> f64 {
    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    -std::f64::consts::SQRT_2 * erfc_inv(2.0 * p)
}

/// `Φ⁻¹(exp(lp))`, accurate when `exp(lp)` underflows.
pub fn quantile_ln(lp: f64) -> f64 {
    if lp >= 0.0 {
        return f64::INFINITY;
    }
    if lp == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if lp > -std::f64::consts::LN_2 {
        return std::f64::consts::SQRT_2 * erfc_inv(-2.0 * lp.exp_m1());
    }
    let mut x = if lp > -700.0 {
        quantile(lp.exp())
    } else {
        let t = -2.0 * lp;
        -(t - (2.0 * std::f64::consts::PI * t).ln()).sqrt()
    };
    if !x.is_finite() {
        return x;
    }
    for _ in 0..50 {
        let f = ln_cdf(x) - lp;
        let step = f / (ln_pdf(x) - ln_cdf(x)).exp();
        x -= step;
        if step.abs() <= 1e-14 * (1.0 + x.abs()) {
            break;
        }
    }
    x
}

/// A draw from `N(mu, sigma2)` conditioned on `value ≤ upper`, by inverting
/// the CDF in log space. Never loops and never exceeds `upper`.
pub fn sample_truncated_normal(mu: f64, sigma2: f64, upper: f64, rng: &mut Rng) -> f64 {
    let sigma = sigma2.sqrt();
    let beta = (upper - mu) / sigma;
    let u: f64 = rng.random();
    let u = u.max(f64::MIN_POSITIVE);
    let z = quantile_ln(u.ln() + ln_cdf(beta)).min(beta);
    (mu + sigma * z).min(upper)
}

/// A draw from `N(mu, sigma2)` conditioned on `value ≥ lower`.
pub fn sample_truncated_normal_lower(mu: f64, sigma2: f64, lower: f64, rng: &mut Rng) -> f64 {
    -sample_truncated_normal(-mu, sigma2, -lower, rng)
}
