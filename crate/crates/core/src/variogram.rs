//! Empirical semivariograms, parametric variogram models, least-squares
//! variogram fitting and kriging on local neighborhoods.
//!
//! A model with nugget `τ²_k`, partial sill `σ²` and range `R` corresponds to
//! the kernel hyperparameters `τ² = σ²`, `g = τ²_k/σ²`, `θ = R²`, so that
//! `γ(h) = τ²(1+g) − Σ(x, x′)` for every pair at distance `h > 0`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, SiteError};
use crate::gp::{mean, BatchPrediction};
use crate::kernel::{Family, Hyperparams, Kernel};
use crate::linalg::{dot, Cholesky};
use crate::locality::SpatialIndex;
use crate::optim::{minimize_box, BfgsOptions};
use crate::points::{sq_dist, Points};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalVariogram {
    /// `h_0 = 0 < h_1 < … < h_k`. Bin 0 is `[0, h_1]`, bin `i` is `(h_i, h_{i+1}]`.
    pub bin_edges: Vec<f64>,
    pub bin_centers: Vec<f64>,
    /// `None` marks a bin without pairs (or one excluded by [`EmpiricalVariogram::subset`]).
    pub gamma_hat: Vec<Option<f64>>,
    pub pair_counts: Vec<usize>,
}

impl EmpiricalVariogram {
    pub fn n_bins(&self) -> usize {
        self.bin_centers.len()
    }

    /// `(center, γ̂, count)` over the non-empty bins.
    pub fn nonempty(&self) -> impl Iterator<Item = (f64, f64, usize)> + '_ {
        (0..self.n_bins()).filter_map(|i| self.gamma_hat[i].map(|g| (self.bin_centers[i], g, self.pair_counts[i])))
    }

    /// Keeps only the listed bins; the others are marked empty.
    pub fn subset(&self, bins: &[usize]) -> EmpiricalVariogram {
        let mut out = self.clone();
        for i in 0..self.n_bins() {
            if !bins.contains(&i) {
                out.gamma_hat[i] = None;
                out.pair_counts[i] = 0;
            }
        }
        out
    }

    /// Keeps only bins lying entirely below `h_max`.
    pub fn truncated(&self, h_max: f64) -> EmpiricalVariogram {
        let keep: Vec<usize> = (0..self.n_bins()).filter(|&i| self.bin_edges[i + 1] <= h_max * (1.0 + 1e-12)).collect();
        self.subset(&keep)
    }
}

/// Classical estimator `γ̂(h) = Σ (y_i − y_j)² / (2|N(h)|)` over unordered
/// pairs binned by distance, up to `h_max`.
pub fn empirical_semivariogram(x: &Points, y: &[f64], bin_width: f64, h_max: f64) -> Result<EmpiricalVariogram> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch { expected: x.len(), found: y.len() });
    }
    if x.len() < 2 {
        return Err(Error::InsufficientData("a variogram needs at least two points".into()));
    }
    if !(bin_width > 0.0 && h_max > bin_width) {
        return Err(Error::invalid("bin_width", "need 0 < bin_width < h_max"));
    }
    let nb = ((h_max / bin_width) - 1e-9).ceil() as usize;
    let edges: Vec<f64> = (0..=nb).map(|i| (i as f64 * bin_width).min(h_max)).collect();
    let centers: Vec<f64> = edges.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();
    let mut sums = vec![0.0; nb];
    let mut counts = vec![0usize; nb];
    let h2max = h_max * h_max;
    for i in 0..x.len() {
        let xi = x.row(i);
        for j in i + 1..x.len() {
            let d2 = sq_dist(xi, x.row(j));
            if d2 > h2max {
                continue;
            }
            let h = d2.sqrt();
            let b = bin_of(&edges, h);
            let dy = y[i] - y[j];
            sums[b] += dy * dy;
            counts[b] += 1;
        }
    }
    let gamma_hat = sums.iter().zip(&counts).map(|(s, &c)| (c > 0).then(|| s / (2.0 * c as f64))).collect();
    Ok(EmpiricalVariogram { bin_edges: edges, bin_centers: centers, gamma_hat, pair_counts: counts })
}

fn bin_of(edges: &[f64], h: f64) -> usize {
    let nb = edges.len() - 1;
    let w = edges[1];
    let mut b = ((h / w).ceil() as usize).saturating_sub(1).min(nb - 1);
    while b > 0 && h <= edges[b] {
        b -= 1;
    }
    while b + 1 < nb && h > edges[b + 1] {
        b += 1;
    }
    b
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariogramModel {
    pub family: Family,
    pub nugget: f64,
    pub partial_sill: f64,
    pub range: f64,
}

impl VariogramModel {
    pub fn sill(&self) -> f64 {
        self.nugget + self.partial_sill
    }

    /// Correlation of the structured component at distance `h`.
    pub fn correlation(&self, h: f64) -> f64 {
        self.family.radial(h * h, self.range * self.range)
    }
}

/// `γ(0) = 0`; `γ(h) = τ²_k + σ²(1 − ρ(h))` for `h > 0`.
pub fn model_semivariogram(m: &VariogramModel, h: f64) -> f64 {
    if h <= 0.0 {
        0.0
    } else {
        m.nugget + m.partial_sill * (1.0 - m.correlation(h))
    }
}

pub fn vgram_to_kernel(m: &VariogramModel) -> Result<Hyperparams> {
    if !(m.partial_sill > 0.0) {
        return Err(Error::invalid("partial_sill", "must be positive"));
    }
    if !(m.range > 0.0) {
        return Err(Error::invalid("range", "must be positive"));
    }
    Hyperparams::new(m.partial_sill, m.nugget / m.partial_sill, Kernel::isotropic(m.family, m.range * m.range)?)
}

pub fn kernel_to_vgram(phi: &Hyperparams) -> Result<VariogramModel> {
    if !phi.kernel.is_isotropic() {
        return Err(Error::invalid("kernel", "variogram models are isotropic"));
    }
    Ok(VariogramModel {
        family: phi.kernel.family(),
        nugget: phi.g * phi.tau2,
        partial_sill: phi.tau2,
        range: phi.kernel.lengthscales()[0].sqrt(),
    })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NlsWeights {
    #[default]
    Equal,
    PairCount,
}

/// Search box for [`fit_nls`]. Unset upper bounds scale with the data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NlsBounds {
    pub nugget_min: f64,
    pub nugget_max: Option<f64>,
    pub sill_min: f64,
    pub sill_max: Option<f64>,
    pub range_min: Option<f64>,
    pub range_max: Option<f64>,
}

impl Default for NlsBounds {
    fn default() -> Self {
        NlsBounds {
            nugget_min: 1e-4,
            nugget_max: None,
            sill_min: 1e-8,
            sill_max: None,
            range_min: None,
            range_max: None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct NlsFit {
    pub model: VariogramModel,
    /// Weighted sum of squared residuals at the optimum.
    pub loss: f64,
    pub converged: bool,
}

/// Weighted least-squares fit of a variogram model to the non-empty bins.
pub fn fit_nls(ev: &EmpiricalVariogram, family: Family, weights: NlsWeights, bounds: &NlsBounds) -> Result<NlsFit> {
    family.validate()?;
    let pts: Vec<(f64, f64, f64)> = ev
        .nonempty()
        .map(|(h, g, c)| {
            let w = match weights {
                NlsWeights::Equal => 1.0,
                NlsWeights::PairCount => c as f64,
            };
            (h, g, w)
        })
        .collect();
    if pts.is_empty() {
        return Err(Error::InsufficientData("all variogram bins are empty".into()));
    }
    if pts.len() < 3 {
        return Err(Error::InsufficientData(format!("{} non-empty bins; at least 3 are needed", pts.len())));
    }
    let wsum: f64 = pts.iter().map(|p| p.2).sum();
    let gmax = pts.iter().map(|p| p.1).fold(0.0, f64::max).max(1e-12);
    let gmin = pts.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
    let hmax = pts.iter().map(|p| p.0).fold(0.0, f64::max);
    let hmin = pts.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
    let lower = [bounds.nugget_min.ln(), bounds.sill_min.ln(), bounds.range_min.unwrap_or(1e-3 * hmin).ln()];
    let upper = [
        bounds.nugget_max.unwrap_or(10.0 * gmax).ln(),
        bounds.sill_max.unwrap_or(10.0 * gmax).ln(),
        bounds.range_max.unwrap_or(10.0 * hmax).ln(),
    ];
    if lower.iter().zip(&upper).any(|(l, u)| l > u) {
        return Err(Error::invalid("bounds", "empty search box"));
    }

    let objective = |z: &[f64]| -> Result<(f64, Vec<f64>)> {
        let (nug, sill, r) = (z[0].exp(), z[1].exp(), z[2].exp());
        let theta = r * r;
        let mut f = 0.0;
        let mut g = [0.0; 3];
        for &(h, gh, w) in &pts {
            let h2 = h * h;
            let rho = family.radial(h2, theta);
            let res = gh - (nug + sill * (1.0 - rho));
            f += w * res * res;
            let drho_dr = family.radial_dtheta(h2, theta) * 2.0 * r;
            g[0] -= 2.0 * w * res;
            g[1] -= 2.0 * w * res * (1.0 - rho);
            g[2] += 2.0 * w * res * sill * drho_dr;
        }
        Ok((f / wsum, vec![g[0] / wsum * nug, g[1] / wsum * sill, g[2] / wsum * r]))
    };

    let nug0 = (0.5 * gmin).max(bounds.nugget_min);
    let sill0 = (gmax - nug0).max(0.1 * gmax);
    let mut best: Option<crate::optim::Minimum> = None;
    for frac in [0.1, 0.25, 0.5, 1.0] {
        let z0 = [nug0.ln(), sill0.ln(), (frac * hmax).ln()];
        let Ok(m) = minimize_box(objective, &z0, &lower, &upper, &BfgsOptions::default()) else {
            continue;
        };
        if best.as_ref().is_none_or(|b| m.f < b.f) {
            best = Some(m);
        }
    }
    let best = best.ok_or_else(|| Error::Failed("variogram fit failed from every start".into()))?;
    if !best.converged() {
        log::warn!("variogram fit stopped early ({:?})", best.termination);
    }
    Ok(NlsFit {
        model: VariogramModel {
            family,
            nugget: best.x[0].exp(),
            partial_sill: best.x[1].exp(),
            range: best.x[2].exp(),
        },
        loss: best.f,
        converged: best.converged(),
    })
}

/// "Eyeball" fit: least squares restricted to bins below `h_max`.
pub fn fit_eyeball(
    ev: &EmpiricalVariogram,
    family: Family,
    h_max: f64,
    weights: NlsWeights,
    bounds: &NlsBounds,
) -> Result<NlsFit> {
    fit_nls(&ev.truncated(h_max), family, weights, bounds)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OkNeighborhood {
    /// The `m` nearest training points.
    Count(usize),
    /// All training points within `r`; fewer than `min_count` is an error.
    Radius { r: f64, min_count: usize },
}

impl Default for OkNeighborhood {
    fn default() -> Self {
        OkNeighborhood::Count(50)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AtData {
    /// Return the datum itself with zero variance at training sites.
    Exact,
    /// Treat the nugget as observation noise everywhere.
    #[default]
    Smoothed,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OkOptions {
    pub neighborhood: OkNeighborhood,
    pub at_data: AtData,
    pub parallel: bool,
}

/// Kriging with a fitted variogram on a local neighborhood of each site.
/// Responses are centered once, globally.
pub fn ok_predict(
    m: &VariogramModel,
    x: &Points,
    y: &[f64],
    xstar: &Points,
    opts: &OkOptions,
) -> Result<BatchPrediction> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch { expected: x.len(), found: y.len() });
    }
    if xstar.dim() != x.dim() {
        return Err(Error::DimensionMismatch { expected: x.dim(), found: xstar.dim() });
    }
    let phi = vgram_to_kernel(m)?;
    let index = SpatialIndex::build(x);
    let ybar = mean(y);
    let yc: Vec<f64> = y.iter().map(|v| v - ybar).collect();
    let site = |j: usize| -> Result<(f64, f64), SiteError> {
        let s = xstar.row(j);
        let mut nb: Vec<(usize, f64)> = match opts.neighborhood {
            OkNeighborhood::Count(k) => index.knn(s, k.min(x.len())),
            OkNeighborhood::Radius { r, min_count } => {
                let v = index.within_radius(s, r);
                if v.len() < min_count.max(1) {
                    return Err(SiteError::EmptyNeighborhood);
                }
                v
            }
        };
        if nb.is_empty() {
            return Err(SiteError::EmptyNeighborhood);
        }
        if opts.at_data == AtData::Exact {
            if let Some(&(i, _)) = nb.iter().filter(|(_, d2)| *d2 == 0.0).min_by_key(|(i, _)| *i) {
                return Ok((y[i], 0.0));
            }
        }
        nb.sort_by_key(|(i, _)| *i);
        let idx: Vec<usize> = nb.iter().map(|(i, _)| *i).collect();
        krige(&phi, x, &yc, &idx, s).map(|(mu, v)| (mu + ybar, v))
    };
    let results: Vec<Result<(f64, f64), SiteError>> = if opts.parallel {
        (0..xstar.len()).into_par_iter().map(site).collect()
    } else {
        (0..xstar.len()).map(site).collect()
    };
    Ok(BatchPrediction::from_results(results))
}

/// Simple kriging of centered responses at `s` from the points `idx`.
pub(crate) fn krige(
    phi: &Hyperparams,
    x: &Points,
    yc: &[f64],
    idx: &[usize],
    s: &[f64],
) -> Result<(f64, f64), SiteError> {
    let sub = x.select(idx);
    let kg = crate::gp::corr_matrix(&phi.kernel, phi.g, &sub).map_err(|_| SiteError::Failed)?;
    let (chol, _) = Cholesky::factor_with_retry(kg.as_ref(), 6).map_err(|_| SiteError::Singular)?;
    let ks = phi.kernel.cross(s, &sub);
    let ys: Vec<f64> = idx.iter().map(|&i| yc[i]).collect();
    let alpha = chol.solve_vec(&ys);
    let v = chol.solve_lower_vec(&ks);
    let mu = dot(&ks, &alpha);
    let var = phi.tau2 * (1.0 + phi.g - dot(&v, &v));
    Ok((mu, var.max(0.0)))
}
