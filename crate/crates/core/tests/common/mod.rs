//! Helpers shared by the integration tests: random designs, GP draws and
//! plain dense linear algebra that does not go through the library.

#![allow(dead_code)]

use gpkrige::kernel::Hyperparams;
use gpkrige::points::Points;
use gpkrige::rng::Rng;
use rand::{Rng as _, SeedableRng};
use rand_distr::{Distribution, StandardNormal};

pub fn rng(seed: u64) -> Rng {
    Rng::seed_from_u64(seed)
}

pub fn normal(rng: &mut Rng) -> f64 {
    StandardNormal.sample(rng)
}

pub fn uniform_points(n: usize, d: usize, rng: &mut Rng) -> Points {
    Points::new((0..n * d).map(|_| rng.random::<f64>()).collect(), d).unwrap()
}

pub fn smooth_response(x: &Points, noise_sd: f64, rng: &mut Rng) -> Vec<f64> {
    x.rows()
        .map(|r| {
            let s: f64 = r.iter().enumerate().map(|(k, v)| ((k + 2) as f64 * v).sin()).sum();
            s + noise_sd * normal(rng)
        })
        .collect()
}

pub type Dense = Vec<Vec<f64>>;

/// `τ²(K + gI)` by a double loop over `Hyperparams::cov`.
pub fn dense_cov(phi: &Hyperparams, x: &Points) -> Dense {
    let n = x.len();
    (0..n)
        .map(|i| (0..n).map(|j| phi.cov(x.row(i), x.row(j)) + if i == j { phi.tau2 * phi.g } else { 0.0 }).collect())
        .collect()
}

/// Lower Cholesky factor, or `None` if not positive definite.
pub fn cholesky(a: &Dense) -> Option<Dense> {
    let n = a.len();
    let mut l = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..=i {
            let s = a[i][j] - (0..j).map(|k| l[i][k] * l[j][k]).sum::<f64>();
            if i == j {
                if s <= 0.0 {
                    return None;
                }
                l[i][i] = s.sqrt();
            } else {
                l[i][j] = s / l[j][j];
            }
        }
    }
    Some(l)
}

pub fn forward(l: &Dense, b: &[f64]) -> Vec<f64> {
    let n = b.len();
    let mut z = vec![0.0; n];
    for i in 0..n {
        z[i] = (b[i] - (0..i).map(|k| l[i][k] * z[k]).sum::<f64>()) / l[i][i];
    }
    z
}

pub fn backward(l: &Dense, z: &[f64]) -> Vec<f64> {
    let n = z.len();
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        x[i] = (z[i] - (i + 1..n).map(|k| l[k][i] * x[k]).sum::<f64>()) / l[i][i];
    }
    x
}

pub fn solve(a: &Dense, b: &[f64]) -> Vec<f64> {
    let l = cholesky(a).expect("positive definite");
    backward(&l, &forward(&l, b))
}

pub fn inverse(a: &Dense) -> Dense {
    let n = a.len();
    let cols: Vec<Vec<f64>> = (0..n)
        .map(|j| {
            let e: Vec<f64> = (0..n).map(|i| if i == j { 1.0 } else { 0.0 }).collect();
            solve(a, &e)
        })
        .collect();
    (0..n).map(|i| (0..n).map(|j| cols[j][i]).collect()).collect()
}

pub fn log_det(a: &Dense) -> f64 {
    let l = cholesky(a).expect("positive definite");
    (0..a.len()).map(|i| 2.0 * l[i][i].ln()).sum()
}

/// `log N(y; μ, Σ)`.
pub fn mvn_log_density(y: &[f64], mu: &[f64], sigma: &Dense) -> f64 {
    let l = cholesky(sigma).expect("positive definite");
    let r: Vec<f64> = y.iter().zip(mu).map(|(a, b)| a - b).collect();
    let z = forward(&l, &r);
    let logdet: f64 = (0..y.len()).map(|i| 2.0 * l[i][i].ln()).sum();
    -0.5 * (y.len() as f64 * (2.0 * std::f64::consts::PI).ln() + logdet + z.iter().map(|v| v * v).sum::<f64>())
}

/// One draw from `N(0, τ²(K + gI))` at `x`.
pub fn gp_draw(phi: &Hyperparams, x: &Points, rng: &mut Rng) -> Vec<f64> {
    let mut c = dense_cov(phi, x);
    for (i, row) in c.iter_mut().enumerate() {
        row[i] += 1e-10 * phi.tau2;
    }
    let l = cholesky(&c).expect("positive definite");
    let z: Vec<f64> = (0..x.len()).map(|_| normal(rng)).collect();
    (0..x.len()).map(|i| (0..=i).map(|k| l[i][k] * z[k]).sum()).collect()
}

/// One draw via the library's Cholesky, for designs too large for [`gp_draw`].
pub fn gp_draw_fast(phi: &Hyperparams, x: &Points, rng: &mut Rng) -> Vec<f64> {
    let mut c = gpkrige::kernel::cov_assemble(phi, x).unwrap().matrix;
    for i in 0..x.len() {
        c[(i, i)] += 1e-10 * phi.tau2;
    }
    let chol = gpkrige::linalg::Cholesky::factor(c.as_ref()).unwrap();
    let l = chol.l();
    let z: Vec<f64> = (0..x.len()).map(|_| normal(rng)).collect();
    (0..x.len()).map(|i| (0..=i).map(|k| l[(i, k)] * z[k]).sum()).collect()
}

pub fn rel_diff(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
}

pub fn max_rel(a: &[f64], b: &[f64]) -> f64 {
    let scale = b.iter().map(|v| v.abs()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max) / scale
}

/// Kolmogorov-Smirnov statistic of `samples` against the CDF `f`.
pub fn ks_statistic(samples: &mut [f64], f: impl Fn(f64) -> f64) -> f64 {
    samples.sort_by(f64::total_cmp);
    let n = samples.len() as f64;
    samples
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let c = f(x);
            (c - i as f64 / n).abs().max(((i + 1) as f64 / n - c).abs())
        })
        .fold(0.0, f64::max)
}

/// Two-sample Kolmogorov-Smirnov statistic.
pub fn ks_two_sample(a: &mut [f64], b: &mut [f64]) -> f64 {
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j, mut d) = (0usize, 0usize, 0.0f64);
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}
