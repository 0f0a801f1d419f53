//! Box-constrained quasi-Newton minimization (projected BFGS with an Armijo
//! backtracking search along the projected path).

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct BfgsOptions {
    pub max_iter: usize,
    /// Stop once the projected gradient's ∞-norm falls below this.
    pub grad_tol: f64,
    /// Stop once an accepted step changes `f` by less than this, relative.
    pub f_rel_tol: f64,
    /// Largest coordinate move of a single step.
    pub max_step: f64,
}

impl Default for BfgsOptions {
    fn default() -> Self {
        BfgsOptions { max_iter: 500, grad_tol: 1e-5, f_rel_tol: 1e-13, max_step: 3.0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Gradient,
    FunctionChange,
    MaxIterations,
    LineSearch,
}

#[derive(Clone, Debug)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub f: f64,
    pub grad: Vec<f64>,
    pub iters: usize,
    pub evals: usize,
    pub termination: Termination,
}

impl Minimum {
    pub fn converged(&self) -> bool {
        matches!(self.termination, Termination::Gradient | Termination::FunctionChange)
    }
}

/// Minimizes `f` over the box `[lower, upper]`. The objective returns the
/// value and gradient; an `Err` at a trial point is treated as `+∞`, but an
/// `Err` at `x0` is returned.
pub fn minimize_box<F>(mut f: F, x0: &[f64], lower: &[f64], upper: &[f64], opts: &BfgsOptions) -> Result<Minimum>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    let n = x0.len();
    if lower.len() != n || upper.len() != n {
        return Err(Error::DimensionMismatch { expected: n, found: lower.len().min(upper.len()) });
    }
    if lower.iter().zip(upper).any(|(l, u)| !(l <= u)) {
        return Err(Error::invalid("bounds", "lower bound exceeds upper bound"));
    }
    let project = |x: &mut [f64]| {
        for i in 0..n {
            x[i] = x[i].clamp(lower[i], upper[i]);
        }
    };
    let mut x = x0.to_vec();
    project(&mut x);
    let (mut fx, mut gx) = f(&x)?;
    if !fx.is_finite() || gx.iter().any(|g| !g.is_finite()) {
        return Err(Error::Failed("objective is not finite at the starting point".into()));
    }
    let mut evals = 1;
    let mut h = identity(n);
    let mut fresh = true;
    let mut termination = Termination::MaxIterations;
    let mut iters = 0;

    while iters < opts.max_iter {
        let active: Vec<bool> =
            (0..n).map(|i| (x[i] <= lower[i] && gx[i] > 0.0) || (x[i] >= upper[i] && gx[i] < 0.0)).collect();
        let pg_norm = (0..n).filter(|&i| !active[i]).map(|i| gx[i].abs()).fold(0.0, f64::max);
        if pg_norm < opts.grad_tol {
            termination = Termination::Gradient;
            break;
        }

        let mut d = vec![0.0; n];
        for i in (0..n).filter(|&i| !active[i]) {
            d[i] = -(0..n).filter(|&j| !active[j]).map(|j| h[i * n + j] * gx[j]).sum::<f64>();
        }
        if dot(&d, &gx) >= 0.0 {
            h = identity(n);
            fresh = true;
            for i in 0..n {
                d[i] = if active[i] { 0.0 } else { -gx[i] };
            }
        }
        let dmax = d.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if dmax > opts.max_step {
            for v in &mut d {
                *v *= opts.max_step / dmax;
            }
        }

        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..50 {
            let mut xt: Vec<f64> = x.iter().zip(&d).map(|(a, b)| a + alpha * b).collect();
            project(&mut xt);
            let s: Vec<f64> = xt.iter().zip(&x).map(|(a, b)| a - b).collect();
            if s.iter().all(|v| *v == 0.0) {
                break;
            }
            evals += 1;
            if let Ok((ft, gt)) = f(&xt) {
                if ft.is_finite() && gt.iter().all(|g| g.is_finite()) && ft <= fx + 1e-4 * dot(&gx, &s) {
                    accepted = Some((xt, s, ft, gt));
                    break;
                }
            }
            alpha *= 0.5;
        }
        iters += 1;

        let Some((xt, s, ft, gt)) = accepted else {
            if fresh {
                termination = Termination::LineSearch;
                break;
            }
            h = identity(n);
            fresh = true;
            continue;
        };

        let y: Vec<f64> = gt.iter().zip(&gx).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-10 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() {
            if fresh {
                let scale = sy / dot(&y, &y);
                h = identity(n);
                h.iter_mut().for_each(|v| *v *= scale);
            }
            bfgs_update(&mut h, &s, &y, sy);
            fresh = false;
        }
        let change = fx - ft;
        x = xt;
        fx = ft;
        gx = gt;
        if change.abs() <= opts.f_rel_tol * fx.abs().max(1.0) {
            termination = Termination::FunctionChange;
            break;
        }
    }

    Ok(Minimum { x, f: fx, grad: gx, iters, evals, termination })
}

fn identity(n: usize) -> Vec<f64> {
    let mut h = vec![0.0; n * n];
    for i in 0..n {
        h[i * n + i] = 1.0;
    }
    h
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Inverse-Hessian update `H ← (I − ρsyᵀ)H(I − ρysᵀ) + ρssᵀ`.
fn bfgs_update(h: &mut [f64], s: &[f64], y: &[f64], sy: f64) {
    let n = s.len();
    let rho = 1.0 / sy;
    let hy: Vec<f64> = (0..n).map(|i| (0..n).map(|j| h[i * n + j] * y[j]).sum()).collect();
    let yhy = dot(y, &hy);
    for i in 0..n {
        for j in 0..n {
            h[i * n + j] += -rho * (hy[i] * s[j] + s[i] * hy[j]) + (rho * rho * yhy + rho) * s[i] * s[j];
        }
    }
}

/// Central finite-difference gradient, for objectives without an analytic one.
pub fn fd_gradient<F>(f: &mut F, x: &[f64], step: f64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    let mut g = vec![0.0; x.len()];
    let mut xt = x.to_vec();
    for i in 0..x.len() {
        let h = step * x[i].abs().max(1.0);
        xt[i] = x[i] + h;
        let fp = f(&xt)?;
        xt[i] = x[i] - h;
        let fm = f(&xt)?;
        xt[i] = x[i];
        g[i] = (fp - fm) / (2.0 * h);
    }
    Ok(g)
}
