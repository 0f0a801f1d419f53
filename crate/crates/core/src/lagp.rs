//! Local approximate GPs: each prediction site gets its own neighborhood,
//! its own maximum-likelihood fit and its own prediction.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, SiteError};
use crate::gp::{concentrated_tau2, fit_mle, mean, BatchPrediction, GpFit, MleBounds, MleOptions};
use crate::kernel::{Family, Hyperparams, Kernel};
use crate::locality::{
    alc_select, cmp_pair, estimate_global_lengthscales, median, prescale_inputs, AlcOptions, GlobalScaleOptions,
    GlobalScales, NeighborSource, Neighborhood, NeighborhoodMethod, SpatialIndex,
};
use crate::points::{sq_dist, Points};
use crate::rng::Rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LagpConfig {
    pub m: usize,
    pub method: NeighborhoodMethod,
    /// Fit a separate lengthscale per coordinate in each local model.
    pub local_ard: bool,
    pub family: Family,
    pub alc: AlcOptions,
    pub mle: MleOptions,
    /// A fit whose nugget lies within this of the lower bound is flagged.
    pub bound_tol: f64,
    pub parallel: bool,
}

impl Default for LagpConfig {
    fn default() -> Self {
        LagpConfig {
            m: 50,
            method: NeighborhoodMethod::Alc,
            local_ard: false,
            family: Family::GAUSSIAN,
            alc: AlcOptions::default(),
            mle: MleOptions { bounds: MleBounds { g: (1e-6, 1e4), theta: (1e-6, 1e4) }, ..MleOptions::default() },
            bound_tol: 1e-6,
            parallel: true,
        }
    }
}

impl LagpConfig {
    /// `m` and the ALC seed size cut down to what `n` points allow.
    pub fn fit_to_size(&self, n: usize) -> LagpConfig {
        let mut c = self.clone();
        c.m = c.m.min(n);
        c.alc.n0 = c.alc.n0.min(c.m.saturating_sub(1)).max(1);
        c
    }
}

/// Starting values shared by every local fit (and the ALC criterion).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StartValues {
    pub theta: f64,
    pub g: f64,
}

impl StartValues {
    /// `θ₀` is the 10% quantile of squared pairwise distances and `g₀` the
    /// 2.5% quantile of squared centered responses relative to their mean,
    /// both over at most 1000 evenly strided points.
    pub fn from_data(x: &Points, y: &[f64]) -> Self {
        let n = x.len();
        let stride = n.div_ceil(1000).max(1);
        let sub: Vec<usize> = (0..n).step_by(stride).collect();
        let mut d2 = Vec::with_capacity(sub.len() * sub.len() / 2);
        for (a, &i) in sub.iter().enumerate() {
            for &j in &sub[a + 1..] {
                let d = sq_dist(x.row(i), x.row(j));
                if d > 0.0 {
                    d2.push(d);
                }
            }
        }
        let theta = quantile(&mut d2, 0.1).unwrap_or(1.0);
        let ybar = mean(y);
        let mut r2: Vec<f64> = y.iter().map(|v| (v - ybar).powi(2)).collect();
        let scale = mean(&r2);
        let g = match quantile(&mut r2, 0.025) {
            Some(q) if scale > 0.0 => (q / scale).clamp(1e-4, 1.0),
            _ => 0.01,
        };
        StartValues { theta, g }
    }
}

fn quantile(v: &mut [f64], p: f64) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let pos = p * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    Some(v[lo] + (pos - lo as f64) * (v[hi] - v[lo]))
}

/// Training data with a spatial index. Extra points can be appended after
/// construction (for sequential imputation); they are searched by a linear
/// scan and indexed after the original points.
#[derive(Clone, Debug)]
pub struct TrainingSet {
    x: Points,
    y: Vec<f64>,
    index: SpatialIndex,
    extra_x: Points,
    extra_y: Vec<f64>,
    start: StartValues,
}

impl TrainingSet {
    pub fn new(x: Points, y: Vec<f64>) -> Result<Self> {
        if x.len() != y.len() {
            return Err(Error::DimensionMismatch { expected: x.len(), found: y.len() });
        }
        let start = StartValues::from_data(&x, &y);
        Ok(TrainingSet::with_start(x, y, start))
    }

    pub fn with_start(x: Points, y: Vec<f64>, start: StartValues) -> Self {
        let index = SpatialIndex::build(&x);
        let extra_x = Points::empty(x.dim());
        TrainingSet { x, y, index, extra_x, extra_y: Vec::new(), start }
    }

    pub fn start(&self) -> StartValues {
        self.start
    }

    pub fn push(&mut self, x: &[f64], y: f64) {
        self.extra_x.push(x);
        self.extra_y.push(y);
    }

    pub fn response(&self, i: usize) -> f64 {
        if i < self.y.len() {
            self.y[i]
        } else {
            self.extra_y[i - self.y.len()]
        }
    }
}

impl NeighborSource for TrainingSet {
    fn len(&self) -> usize {
        self.x.len() + self.extra_x.len()
    }

    fn dim(&self) -> usize {
        self.x.dim()
    }

    fn knn(&self, x: &[f64], k: usize) -> Vec<(usize, f64)> {
        let mut out = self.index.knn(x, k);
        if self.extra_x.is_empty() {
            return out;
        }
        let n = self.x.len();
        out.extend(self.extra_x.rows().enumerate().map(|(e, r)| (n + e, sq_dist(x, r))));
        out.sort_by(|a, b| cmp_pair(*a, *b));
        out.truncate(k);
        out
    }

    fn point(&self, i: usize) -> &[f64] {
        if i < self.x.len() {
            self.index.point(i)
        } else {
            self.extra_x.row(i - self.x.len())
        }
    }
}

#[derive(Clone, Debug)]
pub struct LocalFit {
    pub site: Vec<f64>,
    pub neighborhood: Neighborhood,
    pub phi: Hyperparams,
    pub mean: f64,
    pub var: f64,
    pub nugget_at_bound: bool,
}

/// Local design in ascending index order.
fn local_data(train: &TrainingSet, nb: &Neighborhood) -> (Points, Vec<f64>) {
    let mut idx = nb.indices.clone();
    idx.sort_unstable();
    let mut xs = Points::empty(train.dim());
    let mut ys = Vec::with_capacity(idx.len());
    for i in idx {
        xs.push(train.point(i));
        ys.push(train.response(i));
    }
    (xs, ys)
}

fn local_init(train: &TrainingSet, cfg: &LagpConfig) -> Result<Hyperparams> {
    let st = train.start();
    let b = &cfg.mle.bounds;
    let theta = st.theta.clamp(b.theta.0, b.theta.1);
    let nth = if cfg.local_ard { train.dim() } else { 1 };
    Hyperparams::new(1.0, st.g.clamp(b.g.0, b.g.1), Kernel::new(cfg.family, vec![theta; nth])?)
}

/// Prediction at one site from its local neighborhood.
pub fn lagp_predict_one(train: &TrainingSet, x: &[f64], cfg: &LagpConfig) -> Result<LocalFit, SiteError> {
    let n = train.len();
    if cfg.m > n || cfg.m == 0 {
        return Err(SiteError::EmptyNeighborhood);
    }
    let init = local_init(train, cfg).map_err(|_| SiteError::Failed)?;
    let nb = match cfg.method {
        NeighborhoodMethod::Nn => Neighborhood {
            indices: train.knn(x, cfg.m).into_iter().map(|(i, _)| i).collect(),
            method: NeighborhoodMethod::Nn,
            center: x.to_vec(),
        },
        NeighborhoodMethod::Alc if cfg.alc.n0 >= cfg.m => Neighborhood {
            indices: train.knn(x, cfg.m).into_iter().map(|(i, _)| i).collect(),
            method: NeighborhoodMethod::Alc,
            center: x.to_vec(),
        },
        NeighborhoodMethod::Alc => {
            let phi = Hyperparams {
                kernel: Kernel::isotropic(cfg.family, init.kernel.lengthscales()[0]).map_err(|_| SiteError::Failed)?,
                ..init.clone()
            };
            alc_select(train, x, cfg.m, &cfg.alc, &phi).map_err(|e| SiteError::from_error(&e))?
        }
    };
    let (xs, ys) = local_data(train, &nb);
    let fit = match fit_mle(&xs, &ys, &init, &cfg.mle) {
        Ok(f) => f,
        Err(Error::NotPositiveDefinite) => {
            let retry = Hyperparams { g: (init.g * 100.0).max(1e-3).min(cfg.mle.bounds.g.1), ..init.clone() };
            fit_mle(&xs, &ys, &retry, &cfg.mle).map_err(|e| SiteError::from_error(&e))?
        }
        Err(e) => return Err(SiteError::from_error(&e)),
    };
    finish(fit, nb, x, cfg)
}

fn finish(fit: GpFit, nb: Neighborhood, x: &[f64], cfg: &LagpConfig) -> Result<LocalFit, SiteError> {
    let site = Points::new(x.to_vec(), x.len()).map_err(|_| SiteError::Failed)?;
    let p = fit.predict(&site, false).map_err(|e| SiteError::from_error(&e))?;
    let (mean, var) = (p.mean[0], p.var[0]);
    if !(var > 0.0 && mean.is_finite()) {
        return Err(SiteError::Singular);
    }
    Ok(LocalFit {
        site: x.to_vec(),
        neighborhood: nb,
        nugget_at_bound: fit.phi.g - cfg.mle.bounds.g.0 <= cfg.bound_tol,
        phi: fit.phi,
        mean,
        var,
    })
}

#[derive(Clone, Debug)]
pub struct LagpBatch {
    pub fits: Vec<Result<LocalFit, SiteError>>,
    pub prediction: BatchPrediction,
}

impl LagpBatch {
    fn from_fits(fits: Vec<Result<LocalFit, SiteError>>) -> Self {
        let prediction = BatchPrediction::from_results(
            fits.iter().map(|f| f.as_ref().map(|f| (f.mean, f.var)).map_err(|e| *e)).collect(),
        );
        LagpBatch { fits, prediction }
    }
}

/// Independent local predictions at every row of `xstar`, in order.
pub fn lagp_predict_batch(train: &TrainingSet, xstar: &Points, cfg: &LagpConfig) -> Result<LagpBatch> {
    if xstar.dim() != train.dim() {
        return Err(Error::DimensionMismatch { expected: train.dim(), found: xstar.dim() });
    }
    let one = |j: usize| lagp_predict_one(train, xstar.row(j), cfg);
    let fits = if cfg.parallel {
        (0..xstar.len()).into_par_iter().map(one).collect()
    } else {
        (0..xstar.len()).map(one).collect()
    };
    Ok(LagpBatch::from_fits(fits))
}

#[derive(Clone, Debug)]
pub struct SlagpBatch {
    pub scales: GlobalScales,
    pub batch: LagpBatch,
}

/// Estimates global lengthscales, divides every input column by `√θ_k`,
/// then runs isotropic local prediction in the scaled space.
pub fn slagp_predict_batch(
    x: &Points,
    y: &[f64],
    xstar: &Points,
    cfg: &LagpConfig,
    scale_opts: &GlobalScaleOptions,
    rng: &mut Rng,
) -> Result<SlagpBatch> {
    let scales = estimate_global_lengthscales(x, y, scale_opts, rng)?;
    let batch = lagp_with_scales(x, y, xstar, &scales.theta, cfg)?;
    Ok(SlagpBatch { scales, batch })
}

/// Local prediction after pre-scaling by known lengthscales.
pub fn lagp_with_scales(x: &Points, y: &[f64], xstar: &Points, theta: &[f64], cfg: &LagpConfig) -> Result<LagpBatch> {
    let train = TrainingSet::new(prescale_inputs(x, theta)?, y.to_vec())?;
    let cfg = LagpConfig { local_ard: false, ..cfg.clone() };
    lagp_predict_batch(&train, &prescale_inputs(xstar, theta)?, &cfg)
}

/// Replaces every bound-pinned local nugget with the median nugget of the
/// other fits and recomputes those predictions with the same neighborhood
/// and lengthscale.
pub fn remediate_nuggets(train: &TrainingSet, fits: &[LocalFit]) -> Result<Vec<LocalFit>> {
    let mut free: Vec<f64> = fits.iter().filter(|f| !f.nugget_at_bound).map(|f| f.phi.g).collect();
    if free.is_empty() {
        return Err(Error::InsufficientData("every local nugget sits at its bound".into()));
    }
    let g = median(&mut free);
    fits.iter()
        .map(|f| {
            if !f.nugget_at_bound {
                return Ok(f.clone());
            }
            let (xs, ys) = local_data(train, &f.neighborhood);
            let yc: Vec<f64> = {
                let m = mean(&ys);
                ys.iter().map(|v| v - m).collect()
            };
            let tau2 = concentrated_tau2(g, &f.phi.kernel, &xs, &yc)?;
            let phi = Hyperparams::new(tau2, g, f.phi.kernel.clone())?;
            let fit = GpFit::with_hyperparams(phi, xs, ys)?;
            let site = Points::new(f.site.clone(), f.site.len())?;
            let p = fit.predict(&site, false)?;
            Ok(LocalFit { phi: fit.phi, mean: p.mean[0], var: p.var[0], nugget_at_bound: false, ..f.clone() })
        })
        .collect()
}

/// Applies [`remediate_nuggets`] to the successful fits of a batch.
pub fn remediate_batch(train: &TrainingSet, batch: &LagpBatch) -> Result<LagpBatch> {
    let ok: Vec<LocalFit> = batch.fits.iter().filter_map(|f| f.as_ref().ok().cloned()).collect();
    let mut fixed = remediate_nuggets(train, &ok)?.into_iter();
    let fits = batch
        .fits
        .iter()
        .map(|f| match f {
            Ok(_) => Ok(fixed.next().expect("one remediated fit per success")),
            Err(e) => Err(*e),
        })
        .collect();
    Ok(LagpBatch::from_fits(fits))
}
