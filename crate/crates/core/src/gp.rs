//! Exact Gaussian-process regression.
//!
//! The scale `τ²` is concentrated out of the likelihood, so maximum
//! likelihood works over `(g, θ)` only. Responses are centered inside
//! [`fit_mle`] and the mean is restored at prediction.

use faer::Mat;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, SiteError};
use crate::kernel::{kernel_matrix, kernel_matrix_sym, Family, Hyperparams, Kernel};
use crate::linalg::{dot, Cholesky, MIN_JITTER};
use crate::optim::{minimize_box, BfgsOptions, Termination};
use crate::points::Points;

const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// Scale estimates below this are treated as a degenerate (flat) response.
pub const MIN_TAU2: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MleBounds {
    pub g: (f64, f64),
    pub theta: (f64, f64),
}

impl Default for MleBounds {
    fn default() -> Self {
        MleBounds { g: (1e-6, 1e4), theta: (1e-6, 1e4) }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MleOptions {
    pub bounds: MleBounds,
    pub bfgs: BfgsOptions,
}

/// Mean, variance and optional joint covariance at a set of sites.
#[derive(Clone, Debug)]
pub struct PredictiveDistribution {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub cov: Option<Mat<f64>>,
}

impl PredictiveDistribution {
    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }
}

/// Pointwise predictions from a per-site method. Failed sites carry NaN
/// moments and an error code.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchPrediction {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub errors: Vec<Option<SiteError>>,
}

impl BatchPrediction {
    pub fn from_results(results: Vec<Result<(f64, f64), SiteError>>) -> Self {
        let mut out = BatchPrediction {
            mean: Vec::with_capacity(results.len()),
            var: Vec::with_capacity(results.len()),
            errors: Vec::with_capacity(results.len()),
        };
        for r in results {
            let (m, v, e) = match r {
                Ok((m, v)) => (m, v, None),
                Err(e) => (f64::NAN, f64::NAN, Some(e)),
            };
            out.mean.push(m);
            out.var.push(v);
            out.errors.push(e);
        }
        out
    }

    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }

    pub fn n_errors(&self) -> usize {
        self.errors.iter().filter(|e| e.is_some()).count()
    }

    pub fn to_distribution(&self) -> PredictiveDistribution {
        PredictiveDistribution { mean: self.mean.clone(), var: self.var.clone(), cov: None }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct PredictOptions {
    pub full_cov: bool,
    /// Leave the observation noise `τ²g` out of the predictive variance.
    pub latent: bool,
}

/// `log N(Y; 0, τ²(K + gI))`.
pub fn log_likelihood(phi: &Hyperparams, x: &Points, y: &[f64]) -> Result<f64> {
    phi.validate()?;
    check_xy(x, y)?;
    let kg = corr_matrix(&phi.kernel, phi.g, x)?;
    let chol = Cholesky::factor(kg.as_ref())?;
    let alpha = chol.solve_vec(y);
    let n = y.len() as f64;
    Ok(-0.5 * n * LN_2PI - 0.5 * (n * phi.tau2.ln() + chol.log_det()) - 0.5 * dot(y, &alpha) / phi.tau2)
}

/// `τ̂² = Yᵀ(K+gI)⁻¹Y / N`.
pub fn concentrated_tau2(g: f64, kernel: &Kernel, x: &Points, y: &[f64]) -> Result<f64> {
    Ok(Profile::new(g, kernel, x, y)?.tau2())
}

/// Log likelihood with `τ²` replaced by its maximizer.
pub fn profile_log_likelihood(g: f64, kernel: &Kernel, x: &Points, y: &[f64]) -> Result<f64> {
    Profile::new(g, kernel, x, y)?.value()
}

/// `(∂ℓ/∂g, ∂ℓ/∂θ_1, …)` of the profile log likelihood.
pub fn profile_gradient(g: f64, kernel: &Kernel, x: &Points, y: &[f64]) -> Result<Vec<f64>> {
    Profile::new(g, kernel, x, y)?.gradient(kernel, x)
}

/// Cached pieces of the profile likelihood at one `(g, θ)`.
struct Profile {
    chol: Cholesky,
    alpha: Vec<f64>,
    q: f64,
    n: usize,
}

impl Profile {
    fn new(g: f64, kernel: &Kernel, x: &Points, y: &[f64]) -> Result<Self> {
        check_xy(x, y)?;
        if !(g >= 0.0) {
            return Err(Error::invalid("g", format!("{g} is negative")));
        }
        let kg = corr_matrix(kernel, g, x)?;
        let chol = Cholesky::factor(kg.as_ref())?;
        let alpha = chol.solve_vec(y);
        let q = dot(y, &alpha);
        let tau2 = q / y.len() as f64;
        if !(tau2 >= MIN_TAU2) {
            return Err(Error::DegenerateScale(tau2));
        }
        Ok(Profile { chol, alpha, q, n: y.len() })
    }

    fn tau2(&self) -> f64 {
        self.q / self.n as f64
    }

    fn value(&self) -> Result<f64> {
        let n = self.n as f64;
        Ok(-0.5 * n * (LN_2PI + self.tau2().ln() + 1.0) - 0.5 * self.chol.log_det())
    }

    fn gradient(&self, kernel: &Kernel, x: &Points) -> Result<Vec<f64>> {
        let nth = kernel.lengthscales().len();
        let inv = self.chol.inverse();
        let n = self.n;
        let half_n = 0.5 * n as f64;
        let a = &self.alpha;
        let mut out = vec![0.0; 1 + nth];
        let tr: f64 = (0..n).map(|i| inv[(i, i)]).sum();
        out[0] = half_n * dot(a, a) / self.q - 0.5 * tr;
        let mut quad = vec![0.0; nth];
        let mut trace = vec![0.0; nth];
        let mut dk = vec![0.0; nth];
        for j in 0..n {
            let xj = x.row(j);
            for i in j + 1..n {
                let xi = x.row(i);
                let aa = 2.0 * a[i] * a[j];
                let ii = 2.0 * inv[(i, j)];
                kernel.eval_grad(xi, xj, &mut dk);
                for c in 0..nth {
                    quad[c] += aa * dk[c];
                    trace[c] += ii * dk[c];
                }
            }
        }
        for c in 0..nth {
            out[1 + c] = half_n * quad[c] / self.q - 0.5 * trace[c];
        }
        Ok(out)
    }
}

fn check_xy(x: &Points, y: &[f64]) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch { expected: x.len(), found: y.len() });
    }
    if y.is_empty() {
        return Err(Error::InsufficientData("no observations".into()));
    }
    Ok(())
}

/// `K + gI`.
pub(crate) fn corr_matrix(kernel: &Kernel, g: f64, x: &Points) -> Result<Mat<f64>> {
    let mut k = kernel_matrix_sym(kernel, x)?;
    for i in 0..x.len() {
        k[(i, i)] += g;
    }
    Ok(k)
}

/// Default starting point: `g = 0.1` and `θ_k = 0.1·range_k²` (the summed
/// squared ranges for an isotropic kernel).
pub fn default_init(x: &Points, family: Family, ard: bool) -> Result<Hyperparams> {
    let r2: Vec<f64> = x.column_ranges().iter().map(|(lo, hi)| if hi > lo { (hi - lo).powi(2) } else { 0.0 }).collect();
    let fix = |t: f64| if t > 0.0 { t } else { 0.1 };
    let theta = if ard { r2.iter().map(|r| fix(0.1 * r)).collect() } else { vec![fix(0.1 * r2.iter().sum::<f64>())] };
    Hyperparams::new(1.0, 0.1, Kernel::new(family, theta)?)
}

/// A fitted exact GP, ready for prediction.
#[derive(Clone, Debug)]
pub struct GpFit {
    pub phi: Hyperparams,
    pub x: Points,
    pub y: Vec<f64>,
    pub y_mean: f64,
    pub loglik: f64,
    pub iters: usize,
    pub termination: Termination,
    /// Nugget actually used in the factorization when `g = 0` was requested.
    pub jitter: f64,
    chol: Cholesky,
    alpha: Vec<f64>,
}

impl GpFit {
    /// Conditions on `(X, Y)` with fixed hyperparameters. `Y` is centered
    /// internally, as in [`fit_mle`].
    pub fn with_hyperparams(phi: Hyperparams, x: Points, y: Vec<f64>) -> Result<Self> {
        let y_mean = mean(&y);
        GpFit::assemble(phi, x, y, y_mean, 0, Termination::Gradient)
    }

    /// Like [`GpFit::with_hyperparams`] but with a caller-supplied mean.
    pub fn with_mean(phi: Hyperparams, x: Points, y: Vec<f64>, y_mean: f64) -> Result<Self> {
        GpFit::assemble(phi, x, y, y_mean, 0, Termination::Gradient)
    }

    fn assemble(
        phi: Hyperparams,
        x: Points,
        y: Vec<f64>,
        y_mean: f64,
        iters: usize,
        termination: Termination,
    ) -> Result<Self> {
        phi.validate()?;
        phi.kernel.check_dim(x.dim())?;
        check_xy(&x, &y)?;
        let jitter = if phi.g == 0.0 { MIN_JITTER } else { 0.0 };
        let kg = corr_matrix(&phi.kernel, phi.g + jitter, &x)?;
        let chol = Cholesky::factor(kg.as_ref())?;
        let yc: Vec<f64> = y.iter().map(|v| v - y_mean).collect();
        let alpha = chol.solve_vec(&yc);
        let n = yc.len() as f64;
        let loglik = -0.5 * n * LN_2PI - 0.5 * (n * phi.tau2.ln() + chol.log_det()) - 0.5 * dot(&yc, &alpha) / phi.tau2;
        Ok(GpFit { phi, x, y, y_mean, loglik, iters, termination, jitter, chol, alpha })
    }

    pub fn converged(&self) -> bool {
        matches!(self.termination, Termination::Gradient | Termination::FunctionChange)
    }

    /// Cholesky factor of `K + gI` (correlation scale).
    pub fn chol(&self) -> &Cholesky {
        &self.chol
    }

    pub fn predict(&self, xstar: &Points, full_cov: bool) -> Result<PredictiveDistribution> {
        self.predict_with(xstar, PredictOptions { full_cov, latent: false })
    }

    pub fn predict_with(&self, xstar: &Points, opts: PredictOptions) -> Result<PredictiveDistribution> {
        if xstar.dim() != self.x.dim() {
            return Err(Error::DimensionMismatch { expected: self.x.dim(), found: xstar.dim() });
        }
        let ks = kernel_matrix(&self.phi.kernel, &self.x, xstar)?;
        let np = xstar.len();
        let mean: Vec<f64> =
            (0..np).map(|j| self.y_mean + (0..self.x.len()).map(|i| ks[(i, j)] * self.alpha[i]).sum::<f64>()).collect();
        let mut v = ks;
        self.chol.solve_lower_in_place(v.as_mut());
        let tau2 = self.phi.tau2;
        let noise = if opts.latent { 0.0 } else { self.phi.g };
        let var: Vec<f64> = (0..np)
            .map(|j| {
                let vv: f64 = v.col(j).iter().map(|a| a * a).sum();
                (tau2 * (1.0 + noise - vv)).max(0.0)
            })
            .collect();
        let cov = if opts.full_cov {
            let kss = kernel_matrix_sym(&self.phi.kernel, xstar)?;
            let vtv = v.transpose() * &v;
            let mut c = Mat::from_fn(np, np, |i, j| tau2 * (kss[(i, j)] - vtv[(i, j)]));
            for i in 0..np {
                c[(i, i)] = var[i];
            }
            for j in 0..np {
                for i in 0..j {
                    let s = 0.5 * (c[(i, j)] + c[(j, i)]);
                    c[(i, j)] = s;
                    c[(j, i)] = s;
                }
            }
            Some(c)
        } else {
            None
        };
        Ok(PredictiveDistribution { mean, var, cov })
    }
}

/// Maximum-likelihood fit of `(g, θ)` by projected BFGS in log space,
/// starting from `init` (its `τ²` is ignored).
pub fn fit_mle(x: &Points, y: &[f64], init: &Hyperparams, opts: &MleOptions) -> Result<GpFit> {
    check_xy(x, y)?;
    init.kernel.check_dim(x.dim())?;
    let b = &opts.bounds;
    if !(b.g.0 > 0.0 && b.theta.0 > 0.0 && b.g.0 <= b.g.1 && b.theta.0 <= b.theta.1) {
        return Err(Error::invalid("bounds", "bounds must be positive and ordered"));
    }
    let nth = init.kernel.lengthscales().len();
    let mut lower = vec![b.g.0.ln()];
    let mut upper = vec![b.g.1.ln()];
    lower.extend(std::iter::repeat_n(b.theta.0.ln(), nth));
    upper.extend(std::iter::repeat_n(b.theta.1.ln(), nth));
    let mut z0 = vec![init.g.max(b.g.0).ln()];
    z0.extend(init.kernel.lengthscales().iter().map(|t| t.ln()));

    let y_mean = mean(y);
    let yc: Vec<f64> = y.iter().map(|v| v - y_mean).collect();
    let family = init.kernel.family();
    let objective = |z: &[f64]| -> Result<(f64, Vec<f64>)> {
        let g = z[0].exp();
        let kernel = Kernel::new(family, z[1..].iter().map(|v| v.exp()).collect())?;
        let p = Profile::new(g, &kernel, x, &yc)?;
        let f = -p.value()?;
        let grad = p.gradient(&kernel, x)?;
        let gz = std::iter::once(-grad[0] * g)
            .chain(grad[1..].iter().zip(kernel.lengthscales()).map(|(d, t)| -d * t))
            .collect();
        Ok((f, gz))
    };
    let min = minimize_box(objective, &z0, &lower, &upper, &opts.bfgs)?;
    match min.termination {
        Termination::MaxIterations => log::warn!("MLE hit the iteration limit ({})", min.iters),
        Termination::LineSearch => log::debug!("MLE line search stalled after {} iterations", min.iters),
        _ => {}
    }
    let g = min.x[0].exp();
    let kernel = Kernel::new(family, min.x[1..].iter().map(|v| v.exp()).collect())?;
    let tau2 = Profile::new(g, &kernel, x, &yc)?.tau2();
    let phi = Hyperparams::new(tau2, g, kernel)?;
    GpFit::assemble(phi, x.clone(), y.to_vec(), y_mean, min.iters, min.termination)
}

pub(crate) fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}
