//! Vecchia approximation: ordered nearest-neighbor conditioning, the sparse
//! inverse-Cholesky factor of the precision, the conditional-sum likelihood,
//! scaled-Vecchia fitting and joint prediction.
//!
//! Factor convention: with sites in position order, column `i` of `U` has
//! diagonal `1/σ_i` and entries `−b_j/σ_i` at the rows `j ∈ c(i)`, where
//! `b = Σ(c,c)⁻¹Σ(c,i)` and `σ_i²` is the conditional variance. Then
//! `U Uᵀ` approximates `Σ⁻¹`, exactly when every `c(i)` holds all
//! predecessors.

use std::collections::BTreeMap;
use std::io::Write;

use faer::Mat;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gp::{default_init, mean, MleOptions, PredictiveDistribution};
use crate::kernel::{Family, Hyperparams, Kernel, MaternNu};
use crate::linalg::{dot, small_cholesky, small_solve_lower, small_solve_upper_t};
use crate::locality::{maximin_order, prescale_inputs, SpatialIndex};
use crate::optim::{minimize_box, Termination};
use crate::points::{sq_dist, Points};
use crate::rng::Rng;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type")]
pub enum VecchiaOrdering {
    #[default]
    Maximin,
    Random {
        seed: u64,
    },
    /// An explicit permutation: `perm[k]` is the point at position `k`.
    Given {
        perm: Vec<usize>,
    },
}

/// Ordering plus ordered nearest-neighbor conditioning sets.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConditioningSets {
    /// `order[k]` is the point placed at position `k`.
    pub order: Vec<usize>,
    /// `sets[k]` holds positions `< k`, nearest first.
    pub sets: Vec<Vec<usize>>,
    pub m: usize,
}

impl ConditioningSets {
    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    /// `pos[i]` is the position of point `i`.
    pub fn positions(&self) -> Vec<usize> {
        let mut pos = vec![0; self.order.len()];
        for (k, &i) in self.order.iter().enumerate() {
            pos[i] = k;
        }
        pos
    }

    /// Conditioning set of point `i`, as point indices.
    pub fn set_of(&self, i: usize) -> Vec<usize> {
        let k = self.positions()[i];
        self.sets[k].iter().map(|&p| self.order[p]).collect()
    }
}

/// Orders `x` and gives each position its `min(k, m)` nearest predecessors,
/// measured in the coordinates of `x` as passed (scale beforehand for an
/// anisotropic metric).
pub fn build_conditioning_sets(x: &Points, m: usize, ordering: &VecchiaOrdering) -> Result<ConditioningSets> {
    if m == 0 {
        return Err(Error::invalid("m", "conditioning set size must be at least 1"));
    }
    let n = x.len();
    let order = match ordering {
        VecchiaOrdering::Maximin => maximin_order(x).perm,
        VecchiaOrdering::Random { seed } => {
            let mut perm: Vec<usize> = (0..n).collect();
            perm.shuffle(&mut Rng::seed_from_u64(*seed));
            perm
        }
        VecchiaOrdering::Given { perm } => {
            let mut seen = vec![false; n];
            if perm.len() != n || perm.iter().any(|&i| i >= n || std::mem::replace(&mut seen[i], true)) {
                return Err(Error::invalid("ordering", format!("not a permutation of 0..{n}")));
            }
            perm.clone()
        }
    };
    let xo = x.select(&order);
    let sets = predecessor_nn(&xo, m, true);
    Ok(ConditioningSets { order, sets, m })
}

/// For each row `k` of the ordered points, the `min(k, m)` nearest rows
/// among `0..k`, nearest first with ties to the lower position.
pub(crate) fn predecessor_nn(xo: &Points, m: usize, parallel: bool) -> Vec<Vec<usize>> {
    let n = xo.len();
    let brute_until = (2 * m).max(((m * n) as f64).sqrt() as usize).min(n);
    let brute = |k: usize| {
        let mut c: Vec<(usize, f64)> = (0..k).map(|j| (j, sq_dist(xo.row(k), xo.row(j)))).collect();
        let take = m.min(k);
        if take < c.len() {
            c.select_nth_unstable_by(take - 1, |a, b| crate::locality::cmp_pair(*a, *b));
            c.truncate(take);
        }
        c.sort_by(|a, b| crate::locality::cmp_pair(*a, *b));
        c.into_iter().map(|(j, _)| j).collect::<Vec<_>>()
    };
    let mut out: Vec<Vec<usize>> = if parallel {
        (0..brute_until).into_par_iter().map(brute).collect()
    } else {
        (0..brute_until).map(brute).collect()
    };
    if brute_until < n {
        let index = SpatialIndex::build(xo);
        let tree =
            |k: usize| index.knn_filtered(xo.row(k), m, |j| j < k).into_iter().map(|(j, _)| j).collect::<Vec<_>>();
        let rest: Vec<Vec<usize>> = if parallel {
            (brute_until..n).into_par_iter().map(tree).collect()
        } else {
            (brute_until..n).map(tree).collect()
        };
        out.extend(rest);
    }
    out
}

/// `b = A⁻¹k` and `s² = v − kᵀb` for `A = K(c,c) + diag(nug)` and
/// `k = K(c, target)`, all in units of `τ²`.
fn conditional(
    kernel: &Kernel,
    cond: &[&[f64]],
    nug: &[f64],
    target: &[f64],
    target_var: f64,
) -> Result<(Vec<f64>, f64)> {
    let c = cond.len();
    if c == 0 {
        return Ok((Vec::new(), target_var));
    }
    let mut a = vec![0.0; c * c];
    for r in 0..c {
        for s in 0..r {
            a[r * c + s] = kernel.eval(cond[r], cond[s]);
        }
        a[r * c + r] = 1.0 + nug[r];
    }
    let k: Vec<f64> = cond.iter().map(|p| kernel.eval(target, p)).collect();
    let l = factor_jittered(&a, c)?;
    let mut b = k.clone();
    small_solve_lower(&l, c, &mut b);
    small_solve_upper_t(&l, c, &mut b);
    let s2 = (target_var - dot(&k, &b)).max(target_var * 1e-12);
    Ok((b, s2))
}

fn factor_jittered(a: &[f64], c: usize) -> Result<Vec<f64>> {
    let mut l = a.to_vec();
    if small_cholesky(&mut l, c) {
        return Ok(l);
    }
    let mut jitter = 1e-10;
    for _ in 0..6 {
        l.copy_from_slice(a);
        for r in 0..c {
            l[r * c + r] += jitter;
        }
        if small_cholesky(&mut l, c) {
            return Ok(l);
        }
        jitter *= 10.0;
    }
    Err(Error::NotPositiveDefinite)
}

/// One column of the factor.
#[derive(Clone, Debug, PartialEq)]
pub struct UColumn {
    /// Row positions of the off-diagonal entries.
    pub rows: Vec<usize>,
    pub values: Vec<f64>,
    /// `1/σ_i`.
    pub diag: f64,
    /// Conditional variance `σ_i²`.
    pub sigma2: f64,
}

/// Column `pos` of the factor for points `x` (unscaled) under `cs`.
pub fn u_column(phi: &Hyperparams, x: &Points, cs: &ConditioningSets, pos: usize) -> Result<UColumn> {
    if pos >= cs.len() {
        return Err(Error::invalid("pos", format!("position {pos} out of {}", cs.len())));
    }
    let rows = cs.sets[pos].clone();
    let cond: Vec<&[f64]> = rows.iter().map(|&p| x.row(cs.order[p])).collect();
    let nug = vec![phi.g; rows.len()];
    let (b, s2) = conditional(&phi.kernel, &cond, &nug, x.row(cs.order[pos]), 1.0 + phi.g)?;
    let sigma2 = phi.tau2 * s2;
    let sigma = sigma2.sqrt();
    Ok(UColumn { rows, values: b.iter().map(|v| -v / sigma).collect(), diag: 1.0 / sigma, sigma2 })
}

/// Sparse upper-triangular factor, stored by column in position order.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseUFactor {
    pub cols: Vec<UColumn>,
}

impl SparseUFactor {
    pub fn build(phi: &Hyperparams, x: &Points, cs: &ConditioningSets, parallel: bool) -> Result<Self> {
        phi.validate()?;
        phi.kernel.check_dim(x.dim())?;
        if x.len() != cs.len() {
            return Err(Error::DimensionMismatch { expected: cs.len(), found: x.len() });
        }
        let cols: Result<Vec<UColumn>> = if parallel {
            (0..cs.len()).into_par_iter().map(|k| u_column(phi, x, cs, k)).collect()
        } else {
            (0..cs.len()).map(|k| u_column(phi, x, cs, k)).collect()
        };
        Ok(SparseUFactor { cols: cols? })
    }

    pub fn len(&self) -> usize {
        self.cols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cols.is_empty()
    }

    pub fn nnz(&self) -> usize {
        self.cols.iter().map(|c| 1 + c.rows.len()).sum()
    }

    /// `log |U|`.
    pub fn log_det(&self) -> f64 {
        self.cols.iter().map(|c| c.diag.ln()).sum()
    }

    /// `Uᵀ v` for `v` in position order.
    pub fn mul_transpose(&self, v: &[f64]) -> Vec<f64> {
        self.cols
            .iter()
            .enumerate()
            .map(|(k, c)| c.diag * v[k] + c.rows.iter().zip(&c.values).map(|(&j, u)| u * v[j]).sum::<f64>())
            .collect()
    }

    /// Dense copy, rows and columns in position order.
    pub fn to_dense(&self) -> Mat<f64> {
        let n = self.len();
        let mut u = Mat::<f64>::zeros(n, n);
        for (k, c) in self.cols.iter().enumerate() {
            u[(k, k)] = c.diag;
            for (&j, v) in c.rows.iter().zip(&c.values) {
                u[(j, k)] = *v;
            }
        }
        u
    }

    /// `(row, col, value)` triplets, column by column.
    pub fn triplets(&self) -> Vec<(usize, usize, f64)> {
        let mut out = Vec::with_capacity(self.nnz());
        for (k, c) in self.cols.iter().enumerate() {
            for (&j, v) in c.rows.iter().zip(&c.values) {
                out.push((j, k, *v));
            }
            out.push((k, k, c.diag));
        }
        out
    }

    /// Writes one `row col value` line per nonzero.
    pub fn write_coordinate_list<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for (r, c, v) in self.triplets() {
            writeln!(w, "{r} {c} {v:.16e}")?;
        }
        Ok(())
    }
}

/// Vecchia log likelihood of `y` (taken as zero-mean) as a sum of
/// univariate conditional log densities.
pub fn vecchia_loglik(phi: &Hyperparams, x: &Points, y: &[f64], cs: &ConditioningSets) -> Result<f64> {
    phi.validate()?;
    phi.kernel.check_dim(x.dim())?;
    if x.len() != y.len() || x.len() != cs.len() {
        return Err(Error::DimensionMismatch {
            expected: cs.len(),
            found: if x.len() != cs.len() { x.len() } else { y.len() },
        });
    }
    let term = |k: usize| -> Result<f64> {
        let set = &cs.sets[k];
        let cond: Vec<&[f64]> = set.iter().map(|&p| x.row(cs.order[p])).collect();
        let nug = vec![phi.g; set.len()];
        let (b, s2) = conditional(&phi.kernel, &cond, &nug, x.row(cs.order[k]), 1.0 + phi.g)?;
        let mu: f64 = set.iter().zip(&b).map(|(&p, bj)| bj * y[cs.order[p]]).sum();
        let r = y[cs.order[k]] - mu;
        let var = phi.tau2 * s2;
        Ok(-0.5 * (LN_2PI + var.ln() + r * r / var))
    };
    let terms: Result<Vec<f64>> = (0..cs.len()).into_par_iter().map(term).collect();
    Ok(terms?.into_iter().sum())
}

/// Per-column pieces of the profile likelihood and its gradient.
struct ColumnTerms {
    q: f64,
    log_s2: f64,
    dq: Vec<f64>,
    dlog_s2: Vec<f64>,
}

fn column_terms(
    kernel: &Kernel,
    g: f64,
    xo: &Points,
    yo: &[f64],
    k: usize,
    set: &[usize],
    want_grad: bool,
) -> Result<ColumnTerms> {
    let c = set.len();
    let nth = kernel.lengthscales().len();
    let np = 1 + nth;
    let xi = xo.row(k);
    if c == 0 {
        let s2 = 1.0 + g;
        let r = yo[k];
        let mut dq = vec![0.0; np];
        let mut dl = vec![0.0; np];
        if want_grad {
            dq[0] = -r * r / (s2 * s2);
            dl[0] = 1.0 / s2;
        }
        return Ok(ColumnTerms { q: r * r / s2, log_s2: s2.ln(), dq, dlog_s2: dl });
    }
    let cc = c * c;
    let mut a = vec![0.0; cc];
    let mut da = vec![0.0; if want_grad { nth * cc } else { 0 }];
    let mut kv = vec![0.0; c];
    let mut dk = vec![0.0; if want_grad { nth * c } else { 0 }];
    let mut gb = vec![0.0; nth];
    for r in 0..c {
        let xr = xo.row(set[r]);
        for s in 0..r {
            let v = if want_grad {
                let v = kernel.eval_grad(xr, xo.row(set[s]), &mut gb);
                for t in 0..nth {
                    da[t * cc + r * c + s] = gb[t];
                    da[t * cc + s * c + r] = gb[t];
                }
                v
            } else {
                kernel.eval(xr, xo.row(set[s]))
            };
            a[r * c + s] = v;
            a[s * c + r] = v;
        }
        a[r * c + r] = 1.0 + g;
        kv[r] = if want_grad {
            let v = kernel.eval_grad(xi, xr, &mut gb);
            for t in 0..nth {
                dk[t * c + r] = gb[t];
            }
            v
        } else {
            kernel.eval(xi, xr)
        };
    }
    let l = factor_jittered(&a, c)?;
    let mut b = kv.clone();
    small_solve_lower(&l, c, &mut b);
    small_solve_upper_t(&l, c, &mut b);
    let yc: Vec<f64> = set.iter().map(|&p| yo[p]).collect();
    let mut w = yc.clone();
    small_solve_lower(&l, c, &mut w);
    small_solve_upper_t(&l, c, &mut w);
    let s2 = 1.0 + g - dot(&kv, &b);
    if !(s2 > 0.0) {
        return Err(Error::NotPositiveDefinite);
    }
    let r = yo[k] - dot(&kv, &w);
    let mut dq = vec![0.0; np];
    let mut dl = vec![0.0; np];
    if want_grad {
        let mut push = |p: usize, ds: f64, dr: f64| {
            dq[p] = 2.0 * r * dr / s2 - r * r * ds / (s2 * s2);
            dl[p] = ds / s2;
        };
        push(0, 1.0 + dot(&b, &b), dot(&b, &w));
        for t in 0..nth {
            let dat = &da[t * cc..(t + 1) * cc];
            let dkt = &dk[t * c..(t + 1) * c];
            let mut bab = 0.0;
            let mut baw = 0.0;
            for r in 0..c {
                let row = &dat[r * c..(r + 1) * c];
                bab += b[r] * dot(row, &b);
                baw += b[r] * dot(row, &w);
            }
            push(1 + t, -2.0 * dot(dkt, &b) + bab, -(dot(dkt, &w) - baw));
        }
    }
    Ok(ColumnTerms { q: r * r / s2, log_s2: s2.ln(), dq, dlog_s2: dl })
}

/// Vecchia log likelihood with `τ²` profiled out, and optionally its
/// gradient in `(g, θ_1, …)`. `xo`, `yo` are in position order and `yo`
/// is centered. Returns `(ℓ, ∇ℓ, τ̂²)`.
pub(crate) fn profile_vecchia(
    kernel: &Kernel,
    g: f64,
    xo: &Points,
    yo: &[f64],
    sets: &[Vec<usize>],
    want_grad: bool,
    parallel: bool,
) -> Result<(f64, Vec<f64>, f64)> {
    let n = xo.len();
    let f = |k: usize| column_terms(kernel, g, xo, yo, k, &sets[k], want_grad);
    let terms: Result<Vec<ColumnTerms>> =
        if parallel { (0..n).into_par_iter().map(f).collect() } else { (0..n).map(f).collect() };
    let terms = terms?;
    let np = 1 + kernel.lengthscales().len();
    let mut q = 0.0;
    let mut ls = 0.0;
    let mut dq = vec![0.0; np];
    let mut dl = vec![0.0; np];
    for t in &terms {
        q += t.q;
        ls += t.log_s2;
        if want_grad {
            for p in 0..np {
                dq[p] += t.dq[p];
                dl[p] += t.dlog_s2[p];
            }
        }
    }
    let nf = n as f64;
    let tau2 = q / nf;
    if !(tau2 > 1e-300) {
        return Err(Error::DegenerateScale(tau2));
    }
    let ll = -0.5 * nf * (LN_2PI + 1.0 + tau2.ln()) - 0.5 * ls;
    let grad = if want_grad { (0..np).map(|p| -0.5 * nf * dq[p] / q - 0.5 * dl[p]).collect() } else { Vec::new() };
    Ok((ll, grad, tau2))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SVecchiaConfig {
    pub m: usize,
    pub max_rounds: usize,
    /// Stop once every lengthscale moves by less than this, relative.
    pub rel_tol: f64,
    pub family: Family,
    pub ordering: VecchiaOrdering,
    /// Hyperparameters are estimated on a random subset of at most this
    /// many points; prediction conditions on all of them.
    pub n_est: Option<usize>,
    pub mle: MleOptions,
    pub parallel: bool,
}

impl SVecchiaConfig {
    /// `m` cut down to what `n` points allow.
    pub fn fit_to_size(&self, n: usize) -> SVecchiaConfig {
        SVecchiaConfig { m: self.m.min(n.saturating_sub(1)).max(1), ..self.clone() }
    }
}

impl Default for SVecchiaConfig {
    fn default() -> Self {
        SVecchiaConfig {
            m: 25,
            max_rounds: 3,
            rel_tol: 0.05,
            family: Family::Matern { nu: MaternNu::FiveHalves },
            ordering: VecchiaOrdering::Maximin,
            n_est: Some(5000),
            mle: MleOptions::default(),
            parallel: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SVecchiaRound {
    pub theta: Vec<f64>,
    pub g: f64,
    pub tau2: f64,
    pub loglik: f64,
    pub iters: usize,
    pub termination: Termination,
}

/// A fitted scaled-Vecchia model.
#[derive(Clone, Debug)]
pub struct SVecchiaFit {
    pub phi: Hyperparams,
    pub rounds: Vec<SVecchiaRound>,
    /// Conditioning sets over the estimation points, in the final metric.
    pub conditioning: ConditioningSets,
    /// Factor over the estimation points.
    pub factor: SparseUFactor,
    /// Rows of the training data used for estimation.
    pub est_indices: Vec<usize>,
    /// Vecchia log likelihood of the centered estimation responses.
    pub loglik: f64,
    pub conditioner: Conditioner,
}

/// Scaled Vecchia: alternate likelihood maximization with rescaling the
/// inputs by `√θ̂` and rebuilding the ordering and conditioning sets.
pub fn fit_svecchia(x: &Points, y: &[f64], cfg: &SVecchiaConfig, rng: &mut Rng) -> Result<SVecchiaFit> {
    let n = x.len();
    if n != y.len() {
        return Err(Error::DimensionMismatch { expected: n, found: y.len() });
    }
    if cfg.m == 0 || n < cfg.m + 1 {
        return Err(Error::InsufficientData(format!("{n} points for conditioning sets of size {}", cfg.m)));
    }
    if cfg.max_rounds == 0 {
        return Err(Error::invalid("max_rounds", "at least one round required"));
    }
    let n_est = cfg.n_est.unwrap_or(n).clamp(cfg.m + 1, n);
    let est_indices: Vec<usize> = if n_est < n {
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(rng);
        let mut s = perm[..n_est].to_vec();
        s.sort_unstable();
        s
    } else {
        (0..n).collect()
    };
    let xe = x.select(&est_indices);
    let y_mean = mean(y);
    let ye: Vec<f64> = est_indices.iter().map(|&i| y[i] - y_mean).collect();

    let init = default_init(&xe, cfg.family, true)?;
    let b = &cfg.mle.bounds;
    let nth = xe.dim();
    let mut lower = vec![b.g.0.ln()];
    let mut upper = vec![b.g.1.ln()];
    lower.extend(std::iter::repeat_n(b.theta.0.ln(), nth));
    upper.extend(std::iter::repeat_n(b.theta.1.ln(), nth));

    let mut theta = init.kernel.lengthscales().to_vec();
    let mut g = init.g;
    let mut rounds = Vec::new();
    for round in 0..cfg.max_rounds {
        let scaled = prescale_inputs(&xe, &theta)?;
        let cs = build_conditioning_sets(&scaled, cfg.m, &cfg.ordering)?;
        let xo = xe.select(&cs.order);
        let yo: Vec<f64> = cs.order.iter().map(|&i| ye[i]).collect();
        let objective = |z: &[f64]| -> Result<(f64, Vec<f64>)> {
            let gz = z[0].exp();
            let kernel = Kernel::new(cfg.family, z[1..].iter().map(|v| v.exp()).collect())?;
            let (ll, grad, _) = profile_vecchia(&kernel, gz, &xo, &yo, &cs.sets, true, cfg.parallel)?;
            let gl = std::iter::once(-grad[0] * gz)
                .chain(grad[1..].iter().zip(kernel.lengthscales()).map(|(d, t)| -d * t))
                .collect();
            Ok((-ll, gl))
        };
        let mut z0 = vec![g.clamp(b.g.0, b.g.1).ln()];
        z0.extend(theta.iter().map(|t| t.clamp(b.theta.0, b.theta.1).ln()));
        let min = minimize_box(objective, &z0, &lower, &upper, &cfg.mle.bfgs)?;
        if !min.converged() {
            log::warn!(
                "Vecchia round {} stopped without converging ({:?} after {} iterations)",
                round + 1,
                min.termination,
                min.iters
            );
        }
        let new_theta: Vec<f64> = min.x[1..].iter().map(|v| v.exp()).collect();
        let change = new_theta.iter().zip(&theta).map(|(a, b)| (a / b - 1.0).abs()).fold(0.0, f64::max);
        g = min.x[0].exp();
        let kernel = Kernel::new(cfg.family, new_theta.clone())?;
        let (_, _, tau2) = profile_vecchia(&kernel, g, &xo, &yo, &cs.sets, false, cfg.parallel)?;
        log::info!("Vecchia round {}: theta {:?}, g {g:.4e}, change {change:.3}", round + 1, new_theta);
        rounds.push(SVecchiaRound {
            theta: new_theta.clone(),
            g,
            tau2,
            loglik: -min.f,
            iters: min.iters,
            termination: min.termination,
        });
        theta = new_theta;
        if round >= 1 && change < cfg.rel_tol {
            break;
        }
    }
    let last = rounds.last().expect("at least one round");
    let phi = Hyperparams::new(last.tau2, last.g, Kernel::new(cfg.family, last.theta.clone())?)?;
    let scaled = prescale_inputs(&xe, &theta)?;
    let conditioning = build_conditioning_sets(&scaled, cfg.m, &cfg.ordering)?;
    let factor = SparseUFactor::build(&phi, &xe, &conditioning, cfg.parallel)?;
    let loglik = vecchia_loglik(&phi, &xe, &ye, &conditioning)?;
    let conditioner = Conditioner::new(phi.clone(), x.clone(), y, y_mean, cfg.m)?;
    Ok(SVecchiaFit { phi, rounds, conditioning, factor, est_indices, loglik, conditioner })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct VecchiaPredictOptions {
    pub full_cov: bool,
    /// Let prediction sites condition on earlier prediction sites.
    pub joint: bool,
    /// Predict the noise-free field instead of new observations.
    pub latent: bool,
    pub parallel: bool,
}

impl Default for VecchiaPredictOptions {
    fn default() -> Self {
        VecchiaPredictOptions { full_cov: false, joint: true, latent: false, parallel: true }
    }
}

/// Training data and hyperparameters ready to condition prediction sites on.
#[derive(Clone, Debug)]
pub struct Conditioner {
    phi: Hyperparams,
    x: Points,
    yc: Vec<f64>,
    y_mean: f64,
    m: usize,
    scale: Vec<f64>,
    index: SpatialIndex,
}

impl Conditioner {
    /// Responses are centered by `y_mean` and predictions shifted back.
    pub fn new(phi: Hyperparams, x: Points, y: &[f64], y_mean: f64, m: usize) -> Result<Self> {
        phi.validate()?;
        phi.kernel.check_dim(x.dim())?;
        if x.len() != y.len() {
            return Err(Error::DimensionMismatch { expected: x.len(), found: y.len() });
        }
        if x.is_empty() || m == 0 {
            return Err(Error::InsufficientData("no training points to condition on".into()));
        }
        let theta = phi.kernel.lengthscales();
        let scale: Vec<f64> =
            if theta.len() == 1 { vec![theta[0].sqrt(); x.dim()] } else { theta.iter().map(|t| t.sqrt()).collect() };
        let index = SpatialIndex::build(&x.divide_columns(&scale));
        Ok(Conditioner { yc: y.iter().map(|v| v - y_mean).collect(), phi, x, y_mean, m, scale, index })
    }

    pub fn phi(&self) -> &Hyperparams {
        &self.phi
    }

    pub fn x(&self) -> &Points {
        &self.x
    }

    pub fn y_mean(&self) -> f64 {
        self.y_mean
    }

    pub fn m(&self) -> usize {
        self.m
    }

    /// The same model conditioned on additional observations.
    pub fn with_extra(&self, x: &Points, y: &[f64]) -> Result<Conditioner> {
        let xa = self.x.concat(x)?;
        let mut ya: Vec<f64> = self.yc.iter().map(|v| v + self.y_mean).collect();
        ya.extend_from_slice(y);
        Conditioner::new(self.phi.clone(), xa, &ya, self.y_mean, self.m)
    }

    /// Sequential conditionals for `xstar`, ordered maximin among
    /// themselves in the scaled metric.
    pub fn joint(&self, xstar: &Points, opts: &VecchiaPredictOptions) -> Result<JointPredictor> {
        if xstar.dim() != self.x.dim() {
            return Err(Error::DimensionMismatch { expected: self.x.dim(), found: xstar.dim() });
        }
        if xstar.is_empty() {
            return Err(Error::invalid("xstar", "no prediction sites"));
        }
        let scaled = xstar.divide_columns(&self.scale);
        let order = maximin_order(&scaled).perm;
        let so = scaled.select(&order);
        let xo = xstar.select(&order);
        let m_train = self.m.min(self.x.len());
        let pred_sets =
            if opts.joint { predecessor_nn(&so, self.m, opts.parallel) } else { vec![Vec::new(); xo.len()] };
        let g = self.phi.g;
        let self_var = if opts.latent { 1.0 } else { 1.0 + g };
        let column = |k: usize| -> Result<PredColumn> {
            let sk = so.row(k);
            let mut cands: Vec<(f64, u8, usize)> =
                self.index.knn(sk, m_train).into_iter().map(|(i, d2)| (d2, 0, i)).collect();
            cands.extend(pred_sets[k].iter().map(|&j| (sq_dist(sk, so.row(j)), 1, j)));
            cands.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
            cands.truncate(self.m);
            let cond: Vec<&[f64]> =
                cands.iter().map(|&(_, tag, i)| if tag == 0 { self.x.row(i) } else { xo.row(i) }).collect();
            let nug: Vec<f64> = cands.iter().map(|&(_, tag, _)| if tag == 0 { g } else { self_var - 1.0 }).collect();
            let (b, s2) = conditional(&self.phi.kernel, &cond, &nug, xo.row(k), self_var)?;
            let mut col = PredColumn { base: 0.0, pred: Vec::new(), pred_b: Vec::new(), sigma2: self.phi.tau2 * s2 };
            for (&(_, tag, i), bj) in cands.iter().zip(&b) {
                if tag == 0 {
                    col.base += bj * self.yc[i];
                } else {
                    col.pred.push(i);
                    col.pred_b.push(*bj);
                }
            }
            Ok(col)
        };
        let cols: Result<Vec<PredColumn>> = if opts.parallel {
            (0..xo.len()).into_par_iter().map(column).collect()
        } else {
            (0..xo.len()).map(column).collect()
        };
        Ok(JointPredictor { order, cols: cols?, y_mean: self.y_mean })
    }

    pub fn predict(&self, xstar: &Points, opts: &VecchiaPredictOptions) -> Result<PredictiveDistribution> {
        Ok(self.joint(xstar, opts)?.distribution(opts.full_cov, opts.parallel))
    }
}

#[derive(Clone, Debug, PartialEq)]
struct PredColumn {
    /// Conditional mean contribution from the training responses.
    base: f64,
    /// Earlier prediction positions in the conditioning set.
    pred: Vec<usize>,
    pred_b: Vec<f64>,
    sigma2: f64,
}

/// The prediction block of the joint factor as a sequence of conditionals
/// `z_k = base_k + Σ b_kj z_j + σ_k ε_k` over positions `j < k`.
#[derive(Clone, Debug)]
pub struct JointPredictor {
    /// `order[k]` is the prediction site at position `k`.
    pub order: Vec<usize>,
    cols: Vec<PredColumn>,
    y_mean: f64,
}

impl JointPredictor {
    pub fn len(&self) -> usize {
        self.cols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cols.is_empty()
    }

    /// Walks the sites in position order. `f(site, mean, var)` receives the
    /// conditional moments given the values already chosen and returns the
    /// value for `site` (indices in the caller's order).
    pub fn sample_with(&self, mut f: impl FnMut(usize, f64, f64) -> f64) -> Vec<f64> {
        let mut z = vec![0.0; self.len()];
        for (k, c) in self.cols.iter().enumerate() {
            let mut v = c.base;
            for (&j, b) in c.pred.iter().zip(&c.pred_b) {
                v += b * z[j];
            }
            z[k] = f(self.order[k], v + self.y_mean, c.sigma2) - self.y_mean;
        }
        let mut out = vec![0.0; self.len()];
        for (k, &i) in self.order.iter().enumerate() {
            out[i] = z[k] + self.y_mean;
        }
        out
    }

    /// Predictive mean, in the caller's site order.
    pub fn mean(&self) -> Vec<f64> {
        self.sample_with(|_, m, _| m)
    }

    /// One joint draw from the predictive distribution.
    pub fn draw(&self, rng: &mut Rng) -> Vec<f64> {
        self.sample_with(|_, m, v| {
            let e: f64 = StandardNormal.sample(rng);
            m + v.sqrt() * e
        })
    }

    /// Marginal predictive variances.
    pub fn variances(&self, parallel: bool) -> Vec<f64> {
        let var_at = |k: usize| {
            let mut acc: BTreeMap<usize, f64> = BTreeMap::new();
            acc.insert(k, 1.0);
            let mut v = 0.0;
            while let Some((l, ul)) = acc.pop_last() {
                let c = &self.cols[l];
                v += c.sigma2 * ul * ul;
                for (&j, b) in c.pred.iter().zip(&c.pred_b) {
                    *acc.entry(j).or_insert(0.0) += b * ul;
                }
            }
            v
        };
        let by_pos: Vec<f64> = if parallel {
            (0..self.len()).into_par_iter().map(var_at).collect()
        } else {
            (0..self.len()).map(var_at).collect()
        };
        let mut out = vec![0.0; self.len()];
        for (k, &i) in self.order.iter().enumerate() {
            out[i] = by_pos[k];
        }
        out
    }

    /// Dense predictive covariance `(I−B)⁻¹ D (I−B)⁻ᵀ`.
    pub fn covariance(&self) -> Mat<f64> {
        let n = self.len();
        let mut w = Mat::<f64>::zeros(n, n);
        for (k, c) in self.cols.iter().enumerate() {
            w[(k, k)] = 1.0;
            for (&j, b) in c.pred.iter().zip(&c.pred_b) {
                for l in 0..=j {
                    let v = w[(j, l)];
                    if v != 0.0 {
                        w[(k, l)] += b * v;
                    }
                }
            }
        }
        for (l, c) in self.cols.iter().enumerate() {
            let s = c.sigma2.sqrt();
            for k in l..n {
                w[(k, l)] *= s;
            }
        }
        let cov = &w * w.transpose();
        Mat::from_fn(n, n, |a, b| {
            let (pa, pb) = (self.position_of(a), self.position_of(b));
            0.5 * (cov[(pa, pb)] + cov[(pb, pa)])
        })
    }

    fn position_of(&self, i: usize) -> usize {
        self.order.iter().position(|&o| o == i).expect("site in order")
    }

    /// The prediction block of the factor, in position order.
    pub fn factor(&self) -> SparseUFactor {
        SparseUFactor {
            cols: self
                .cols
                .iter()
                .map(|c| {
                    let s = c.sigma2.sqrt();
                    UColumn {
                        rows: c.pred.clone(),
                        values: c.pred_b.iter().map(|b| -b / s).collect(),
                        diag: 1.0 / s,
                        sigma2: c.sigma2,
                    }
                })
                .collect(),
        }
    }

    pub fn distribution(&self, full_cov: bool, parallel: bool) -> PredictiveDistribution {
        let mean = self.mean();
        if full_cov {
            let cov = self.covariance();
            let var = (0..self.len()).map(|i| cov[(i, i)]).collect();
            PredictiveDistribution { mean, var, cov: Some(cov) }
        } else {
            PredictiveDistribution { mean, var: self.variances(parallel), cov: None }
        }
    }
}

/// Joint prediction at `xstar` from a scaled-Vecchia fit.
pub fn vecchia_predict(fit: &SVecchiaFit, xstar: &Points, full_cov: bool) -> Result<PredictiveDistribution> {
    fit.conditioner.predict(xstar, &VecchiaPredictOptions { full_cov, ..Default::default() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gp::{log_likelihood, GpFit};

    fn cloud(n: usize, d: usize, seed: u64) -> Points {
        let mut r = Rng::seed_from_u64(seed);
        let data: Vec<f64> = (0..n * d).map(|_| rand::Rng::random::<f64>(&mut r)).collect();
        Points::new(data, d).unwrap()
    }

    fn phi(d: usize) -> Hyperparams {
        let k =
            Kernel::new(Family::Matern { nu: MaternNu::FiveHalves }, (0..d).map(|k| 0.05 + 0.03 * k as f64).collect())
                .unwrap();
        Hyperparams::new(1.7, 0.05, k).unwrap()
    }

    #[test]
    fn small_sets_take_all_predecessors() {
        let x = cloud(12, 2, 3);
        let cs = build_conditioning_sets(&x, 10, &VecchiaOrdering::Maximin).unwrap();
        assert!(cs.sets[0].is_empty());
        let mut s3 = cs.sets[3].clone();
        s3.sort_unstable();
        assert_eq!(s3, vec![0, 1, 2]);
        assert!(cs.sets.iter().enumerate().all(|(k, s)| s.len() == k.min(10)));
    }

    #[test]
    fn full_conditioning_is_exact() {
        let x = cloud(40, 2, 5);
        let y: Vec<f64> = (0..40).map(|i| (i as f64 * 0.37).sin()).collect();
        let p = phi(2);
        let cs = build_conditioning_sets(&x, 39, &VecchiaOrdering::Maximin).unwrap();
        let lv = vecchia_loglik(&p, &x, &y, &cs).unwrap();
        let le = log_likelihood(&p, &x, &y).unwrap();
        assert!((lv - le).abs() < 1e-8 * le.abs());
        let u = SparseUFactor::build(&p, &x, &cs, false).unwrap();
        assert_eq!(u.nnz(), (0..40).map(|k| 1 + k).sum::<usize>());
        let yo: Vec<f64> = cs.order.iter().map(|&i| y[i]).collect();
        let uy = u.mul_transpose(&yo);
        let alt = -20.0 * LN_2PI + u.log_det() - 0.5 * dot(&uy, &uy);
        assert!((alt - le).abs() < 1e-8 * le.abs());
    }

    #[test]
    fn profile_gradient_matches_differences() {
        let x = cloud(60, 2, 7);
        let y: Vec<f64> = (0..60).map(|i| (i as f64 * 0.21).cos()).collect();
        let p = phi(2);
        let cs = build_conditioning_sets(&x, 8, &VecchiaOrdering::Maximin).unwrap();
        let xo = x.select(&cs.order);
        let yo: Vec<f64> = cs.order.iter().map(|&i| y[i]).collect();
        let f = |z: &[f64]| {
            let k = p.kernel.with_lengthscales(z[1..].to_vec()).unwrap();
            profile_vecchia(&k, z[0], &xo, &yo, &cs.sets, false, false).unwrap().0
        };
        let z = vec![p.g, 0.05, 0.08];
        let (_, grad, _) = profile_vecchia(&p.kernel, p.g, &xo, &yo, &cs.sets, true, false).unwrap();
        for i in 0..3 {
            let h = 1e-6 * z[i];
            let mut zp = z.clone();
            let mut zm = z.clone();
            zp[i] += h;
            zm[i] -= h;
            let fd = (f(&zp) - f(&zm)) / (2.0 * h);
            assert!((fd - grad[i]).abs() < 1e-5 * (1.0 + fd.abs()), "{i}: {fd} vs {}", grad[i]);
        }
    }

    #[test]
    fn joint_prediction_is_exact_with_full_sets() {
        let x = cloud(30, 2, 9);
        let y: Vec<f64> = (0..30).map(|i| (i as f64 * 0.5).sin()).collect();
        let xs = cloud(6, 2, 10);
        let p = phi(2);
        let exact = GpFit::with_hyperparams(p.clone(), x.clone(), y.clone()).unwrap().predict(&xs, true).unwrap();
        let cond = Conditioner::new(p, x, &y, mean(&y), 40).unwrap();
        let opts = VecchiaPredictOptions { full_cov: true, parallel: false, ..Default::default() };
        let v = cond.predict(&xs, &opts).unwrap();
        let var = cond.joint(&xs, &opts).unwrap().variances(false);
        let ec = exact.cov.unwrap();
        let vc = v.cov.unwrap();
        for i in 0..6 {
            assert!((v.mean[i] - exact.mean[i]).abs() < 1e-8);
            assert!((var[i] - exact.var[i]).abs() < 1e-8);
            for j in 0..6 {
                assert!((vc[(i, j)] - ec[(i, j)]).abs() < 1e-8);
            }
        }
    }
}
