//! Censored responses: imputation by sequential local-GP draws or epoch-wise
//! Vecchia draws, multiple imputation, mixture pooling and the collapsing of
//! flat boreholes.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::gp::PredictiveDistribution;
use crate::lagp::{lagp_predict_batch, lagp_predict_one, LagpConfig, TrainingSet};
use crate::locality::{
    estimate_global_lengthscales, maximin_order, prescale_inputs, GlobalScaleOptions, NeighborSource,
};
use crate::normal::{sample_truncated_normal, sample_truncated_normal_lower};
use crate::points::Points;
use crate::rng::{Rng, SeedStream};
use crate::vecchia::{fit_svecchia, Conditioner, SVecchiaConfig, VecchiaPredictOptions};

/// Which side of the threshold the true value lies on.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CensorDirection {
    /// True value at or below the threshold (detection limit).
    #[default]
    Left,
    /// True value at or above the threshold.
    Right,
}

impl CensorDirection {
    pub fn admits(self, value: f64, threshold: f64) -> bool {
        match self {
            CensorDirection::Left => value <= threshold,
            CensorDirection::Right => value >= threshold,
        }
    }

    /// A draw from `N(mu, var)` restricted to the admissible side.
    pub fn sample(self, mu: f64, var: f64, threshold: f64, rng: &mut Rng) -> f64 {
        match self {
            CensorDirection::Left => sample_truncated_normal(mu, var, threshold, rng),
            CensorDirection::Right => sample_truncated_normal_lower(mu, var, threshold, rng),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct CensorSpec {
    pub censored: Vec<bool>,
    /// Present exactly on censored records.
    pub threshold: Vec<Option<f64>>,
    pub direction: CensorDirection,
}

impl CensorSpec {
    pub fn new(censored: Vec<bool>, threshold: Vec<Option<f64>>, direction: CensorDirection) -> Result<Self> {
        if censored.len() != threshold.len() {
            return Err(Error::DimensionMismatch { expected: censored.len(), found: threshold.len() });
        }
        for (i, (c, t)) in censored.iter().zip(&threshold).enumerate() {
            match (c, t) {
                (true, Some(t)) if t.is_finite() => {}
                (false, None) => {}
                _ => {
                    return Err(Error::invalid(
                        "censor",
                        format!("record {i}: censored records need a finite threshold, others none"),
                    ))
                }
            }
        }
        Ok(CensorSpec { censored, threshold, direction })
    }

    pub fn none(n: usize) -> Self {
        CensorSpec { censored: vec![false; n], threshold: vec![None; n], direction: CensorDirection::Left }
    }

    pub fn len(&self) -> usize {
        self.censored.len()
    }

    pub fn is_empty(&self) -> bool {
        self.censored.is_empty()
    }

    pub fn n_censored(&self) -> usize {
        self.censored.iter().filter(|c| **c).count()
    }

    pub fn observed_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| !self.censored[i]).collect()
    }

    pub fn censored_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.censored[i]).collect()
    }

    pub fn select(&self, idx: &[usize]) -> CensorSpec {
        CensorSpec {
            censored: idx.iter().map(|&i| self.censored[i]).collect(),
            threshold: idx.iter().map(|&i| self.threshold[i]).collect(),
            direction: self.direction,
        }
    }
}

/// One completed set of censored values.
#[derive(Clone, Debug, PartialEq)]
pub struct Imputed {
    /// Imputed values, in the order of the censored sites given.
    pub values: Vec<f64>,
    /// Sites filled by the fallback path rather than the main sampler.
    pub fallback: Vec<bool>,
    /// Epochs used (Vecchia engine; zero otherwise).
    pub epochs: usize,
    /// Sites still unfilled after each epoch.
    pub remaining: Vec<usize>,
}

fn check_sites(x_obs: &Points, y_obs: &[f64], x_cens: &Points, thresholds: &[f64]) -> Result<()> {
    if x_obs.is_empty() {
        return Err(Error::InsufficientData("no observed data".into()));
    }
    if x_obs.len() != y_obs.len() {
        return Err(Error::DimensionMismatch { expected: x_obs.len(), found: y_obs.len() });
    }
    if x_cens.len() != thresholds.len() {
        return Err(Error::DimensionMismatch { expected: x_cens.len(), found: thresholds.len() });
    }
    if x_cens.dim() != x_obs.dim() {
        return Err(Error::DimensionMismatch { expected: x_obs.dim(), found: x_cens.dim() });
    }
    Ok(())
}

/// Sequential imputation with local GPs: censored sites are visited in
/// maximin order, each predicted from the observed data plus the sites
/// already imputed, drawn from the truncated predictive and appended.
/// `theta` pre-scales the inputs (SLAGP); `None` runs plain LAGP.
#[allow(clippy::too_many_arguments)]
pub fn impute_lagp(
    x_obs: &Points,
    y_obs: &[f64],
    x_cens: &Points,
    thresholds: &[f64],
    direction: CensorDirection,
    theta: Option<&[f64]>,
    cfg: &LagpConfig,
    rng: &mut Rng,
) -> Result<Imputed> {
    check_sites(x_obs, y_obs, x_cens, thresholds)?;
    let nc = x_cens.len();
    let (xo, xc) = match theta {
        Some(t) => (prescale_inputs(x_obs, t)?, prescale_inputs(x_cens, t)?),
        None => (x_obs.clone(), x_cens.clone()),
    };
    let mut train = TrainingSet::new(xo, y_obs.to_vec())?;
    let mut values = vec![f64::NAN; nc];
    let mut fallback = vec![false; nc];
    let mut cfg = cfg.clone();
    cfg.local_ard = cfg.local_ard && theta.is_none();
    for i in maximin_order(&xc).perm {
        let site = xc.row(i);
        let local = cfg.fit_to_size(train.len());
        let v = match lagp_predict_one(&train, site, &local) {
            Ok(f) => direction.sample(f.mean, f.var, thresholds[i], rng),
            Err(e) => {
                log::warn!("local fit failed at censored site {i} ({e:?}); imputing the threshold");
                fallback[i] = true;
                thresholds[i]
            }
        };
        values[i] = v;
        train.push(site, v);
    }
    Ok(Imputed { values, fallback, epochs: 0, remaining: Vec::new() })
}

/// Epoch-wise imputation with a Vecchia model: draw every remaining site
/// jointly without the constraint, keep the admissible draws, condition on
/// them and repeat. After `epoch_cap` epochs the stragglers are filled by
/// sequential truncated draws along the joint conditionals.
pub fn impute_vecchia(
    base: &Conditioner,
    x_cens: &Points,
    thresholds: &[f64],
    direction: CensorDirection,
    epoch_cap: usize,
    parallel: bool,
    rng: &mut Rng,
) -> Result<Imputed> {
    if x_cens.len() != thresholds.len() {
        return Err(Error::DimensionMismatch { expected: x_cens.len(), found: thresholds.len() });
    }
    let nc = x_cens.len();
    let mut values = vec![f64::NAN; nc];
    let mut fallback = vec![false; nc];
    let mut remaining: Vec<usize> = (0..nc).collect();
    let mut counts = Vec::new();
    let mut acc_x = Points::empty(x_cens.dim());
    let mut acc_y = Vec::new();
    let opts = VecchiaPredictOptions { parallel, ..Default::default() };
    let condition = |ax: &Points, ay: &[f64]| -> Result<Option<Conditioner>> {
        if ay.is_empty() {
            Ok(None)
        } else {
            base.with_extra(ax, ay).map(Some)
        }
    };
    let mut epochs = 0;
    while !remaining.is_empty() && epochs < epoch_cap {
        let extra = condition(&acc_x, &acc_y)?;
        let cond = extra.as_ref().unwrap_or(base);
        let jp = cond.joint(&x_cens.select(&remaining), &opts)?;
        let draw = jp.draw(rng);
        let mut next = Vec::with_capacity(remaining.len());
        for (k, &i) in remaining.iter().enumerate() {
            if direction.admits(draw[k], thresholds[i]) {
                values[i] = draw[k];
                acc_x.push(x_cens.row(i));
                acc_y.push(draw[k]);
            } else {
                next.push(i);
            }
        }
        remaining = next;
        epochs += 1;
        counts.push(remaining.len());
    }
    if !remaining.is_empty() {
        log::warn!(
            "{} censored sites unfilled after {epochs} epochs; drawing them from truncated conditionals",
            remaining.len()
        );
        let extra = condition(&acc_x, &acc_y)?;
        let cond = extra.as_ref().unwrap_or(base);
        let jp = cond.joint(&x_cens.select(&remaining), &opts)?;
        let drawn = jp.sample_with(|k, m, v| direction.sample(m, v, thresholds[remaining[k]], rng));
        for (k, &i) in remaining.iter().enumerate() {
            values[i] = drawn[k];
            fallback[i] = true;
        }
    }
    Ok(Imputed { values, fallback, epochs, remaining: counts })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImputeEngine {
    Lagp,
    Slagp,
    Svecchia,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ImputeConfig {
    pub n_imputations: usize,
    pub engine: ImputeEngine,
    pub lagp: LagpConfig,
    pub scales: GlobalScaleOptions,
    pub svecchia: SVecchiaConfig,
    pub epoch_cap: usize,
    pub full_cov: bool,
    pub parallel: bool,
}

impl Default for ImputeConfig {
    fn default() -> Self {
        ImputeConfig {
            n_imputations: 5,
            engine: ImputeEngine::Slagp,
            lagp: LagpConfig::default(),
            scales: GlobalScaleOptions::default(),
            svecchia: SVecchiaConfig::default(),
            epoch_cap: 100,
            full_cov: false,
            parallel: true,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Imputation {
    pub imputed: Imputed,
    /// Prediction at the test sites given the observed and imputed data.
    pub prediction: PredictiveDistribution,
    /// Test sites whose local prediction failed.
    pub n_errors: usize,
}

#[derive(Clone, Debug)]
pub struct ImputationRun {
    pub seed: u64,
    pub engine: ImputeEngine,
    pub imputations: Vec<Imputation>,
}

impl ImputationRun {
    pub fn n_imputations(&self) -> usize {
        self.imputations.len()
    }

    /// Pooled mean and variance at every test site.
    pub fn pooled(&self) -> PredictiveDistribution {
        let n = self.imputations.first().map_or(0, |i| i.prediction.len());
        let (mean, var) = (0..n).map(|j| mixture_moments(self, j)).unzip();
        PredictiveDistribution { mean, var, cov: None }
    }
}

/// Multiple imputation of the censored sites followed by prediction at
/// `xstar` for each completed data set. Hyperparameters (global scales for
/// SLAGP, the fitted model for SVecchia) are estimated once from the
/// observed data.
#[allow(clippy::too_many_arguments)]
pub fn multiple_impute(
    x_obs: &Points,
    y_obs: &[f64],
    x_cens: &Points,
    thresholds: &[f64],
    direction: CensorDirection,
    xstar: &Points,
    cfg: &ImputeConfig,
    seeds: &SeedStream,
) -> Result<ImputationRun> {
    if cfg.n_imputations == 0 {
        return Err(Error::invalid("n_imputations", "at least one imputation required"));
    }
    check_sites(x_obs, y_obs, x_cens, thresholds)?;
    let x_all = x_obs.concat(x_cens)?;
    let run_one: Box<dyn Fn(usize) -> Result<Imputation> + Sync> = match cfg.engine {
        ImputeEngine::Lagp | ImputeEngine::Slagp => {
            let theta = if cfg.engine == ImputeEngine::Slagp {
                let mut rng = seeds.rng("scales");
                Some(estimate_global_lengthscales(x_obs, y_obs, &cfg.scales, &mut rng)?.theta)
            } else {
                None
            };
            Box::new(move |i: usize| {
                let mut rng = seeds.nth(i as u64).rng("impute");
                let imputed =
                    impute_lagp(x_obs, y_obs, x_cens, thresholds, direction, theta.as_deref(), &cfg.lagp, &mut rng)?;
                let mut y_all = y_obs.to_vec();
                y_all.extend_from_slice(&imputed.values);
                let (xa, xs) = match &theta {
                    Some(t) => (prescale_inputs(&x_all, t)?, prescale_inputs(xstar, t)?),
                    None => (x_all.clone(), xstar.clone()),
                };
                let train = TrainingSet::new(xa, y_all)?;
                let mut lcfg = cfg.lagp.fit_to_size(train.len());
                lcfg.local_ard = lcfg.local_ard && theta.is_none();
                let batch = lagp_predict_batch(&train, &xs, &lcfg)?;
                Ok(Imputation {
                    imputed,
                    n_errors: batch.prediction.n_errors(),
                    prediction: batch.prediction.to_distribution(),
                })
            })
        }
        ImputeEngine::Svecchia => {
            let mut rng = seeds.rng("fit");
            let fit = fit_svecchia(x_obs, y_obs, &cfg.svecchia, &mut rng)?;
            Box::new(move |i: usize| {
                let mut rng = seeds.nth(i as u64).rng("impute");
                let imputed = impute_vecchia(
                    &fit.conditioner,
                    x_cens,
                    thresholds,
                    direction,
                    cfg.epoch_cap,
                    cfg.parallel,
                    &mut rng,
                )?;
                let cond = if x_cens.is_empty() {
                    fit.conditioner.clone()
                } else {
                    fit.conditioner.with_extra(x_cens, &imputed.values)?
                };
                let prediction = if xstar.is_empty() {
                    PredictiveDistribution { mean: Vec::new(), var: Vec::new(), cov: None }
                } else {
                    cond.predict(
                        xstar,
                        &VecchiaPredictOptions { full_cov: cfg.full_cov, parallel: cfg.parallel, ..Default::default() },
                    )?
                };
                Ok(Imputation { imputed, prediction, n_errors: 0 })
            })
        }
    };
    let imputations: Result<Vec<Imputation>> = if cfg.parallel {
        (0..cfg.n_imputations).into_par_iter().map(&run_one).collect()
    } else {
        (0..cfg.n_imputations).map(run_one).collect()
    };
    Ok(ImputationRun { seed: seeds.seed(), engine: cfg.engine, imputations: imputations? })
}

/// Mean and variance of the equal-weight Gaussian mixture at test site `at`.
pub fn mixture_moments(run: &ImputationRun, at: usize) -> (f64, f64) {
    let m = run.imputations.len() as f64;
    let mut s_mu = 0.0;
    let mut s_var = 0.0;
    let mut s_mu2 = 0.0;
    for imp in &run.imputations {
        let mu = imp.prediction.mean[at];
        s_mu += mu;
        s_mu2 += mu * mu;
        s_var += imp.prediction.var[at];
    }
    let mean = s_mu / m;
    (mean, s_var / m + (s_mu2 / m - mean * mean).max(0.0))
}

/// Replaces every hole whose responses are all equal by its two depth
/// extremes and the record nearest the middle depth. Record order is
/// otherwise kept. Depth is coordinate `depth_coord`.
pub fn collapse_flat_boreholes(d: &Dataset, depth_coord: usize) -> Result<Dataset> {
    if depth_coord >= d.x.dim() {
        return Err(Error::invalid("depth_coord", format!("no coordinate {depth_coord}")));
    }
    let mut keep = vec![true; d.len()];
    for (_, idx) in d.holes() {
        if idx.len() <= 3 || idx.iter().any(|&i| d.y[i] != d.y[idx[0]]) {
            continue;
        }
        let depth = |i: usize| d.x.row(i)[depth_coord];
        let mut by_depth = idx.clone();
        by_depth.sort_by(|&a, &b| depth(a).total_cmp(&depth(b)).then(a.cmp(&b)));
        let lo = by_depth[0];
        let hi = by_depth[by_depth.len() - 1];
        let mid_depth = 0.5 * (depth(lo) + depth(hi));
        let mid = by_depth[1..by_depth.len() - 1]
            .iter()
            .copied()
            .min_by(|&a, &b| (depth(a) - mid_depth).abs().total_cmp(&(depth(b) - mid_depth).abs()).then(a.cmp(&b)))
            .expect("hole has interior records");
        for &i in &idx {
            keep[i] = i == lo || i == hi || i == mid;
        }
    }
    let idx: Vec<usize> = (0..d.len()).filter(|&i| keep[i]).collect();
    Ok(d.select(&idx))
}
