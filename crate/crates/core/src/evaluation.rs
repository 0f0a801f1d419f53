//! Scoring rules, borehole-preserving cross-validation and the subset-GP
//! baseline.

use std::time::Instant;

use faer::MatRef;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{fmt_f64, Dataset};
use crate::error::{Error, Result, SiteError};
use crate::gp::{default_init, fit_mle, GpFit, MleOptions};
use crate::kernel::Family;
use crate::lagp::{lagp_predict_batch, remediate_batch, LagpConfig, TrainingSet};
use crate::linalg::Cholesky;
use crate::locality::{estimate_global_lengthscales, prescale_inputs, GlobalScaleOptions};
use crate::normal::ln_cdf;
use crate::points::Points;
use crate::rng::{Rng, SeedStream};
use crate::variogram::{
    empirical_semivariogram, fit_nls, ok_predict, NlsBounds, NlsWeights, OkOptions, VariogramModel,
};
use crate::vecchia::{fit_svecchia, SVecchiaConfig, VecchiaPredictOptions};

fn check_len(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::DimensionMismatch { expected: a, found: b });
    }
    if a == 0 {
        return Err(Error::InsufficientData("nothing to score".into()));
    }
    Ok(())
}

/// Root mean squared error.
pub fn rmse(y: &[f64], mu: &[f64]) -> Result<f64> {
    check_len(y.len(), mu.len())?;
    let s: f64 = y.iter().zip(mu).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok((s / y.len() as f64).sqrt())
}

/// `−log|Σ| − rᵀΣ⁻¹r` with `r = y − μ`. Higher is better.
pub fn score_full(y: &[f64], mu: &[f64], sigma: MatRef<'_, f64>) -> Result<f64> {
    check_len(y.len(), mu.len())?;
    check_len(y.len(), sigma.nrows())?;
    let chol = Cholesky::factor(sigma)?;
    let r: Vec<f64> = y.iter().zip(mu).map(|(a, b)| a - b).collect();
    let v = chol.solve_lower_vec(&r);
    Ok(-chol.log_det() - v.iter().map(|x| x * x).sum::<f64>())
}

/// The diagonal-covariance form of [`score_full`].
pub fn score_pointwise(y: &[f64], mu: &[f64], var: &[f64]) -> Result<f64> {
    check_len(y.len(), mu.len())?;
    check_len(y.len(), var.len())?;
    if let Some(v) = var.iter().find(|v| !(**v > 0.0)) {
        return Err(Error::invalid("var", format!("nonpositive variance {v}")));
    }
    Ok(y.iter().zip(mu).zip(var).map(|((y, m), v)| -v.ln() - (y - m) * (y - m) / v).sum())
}

/// Mean of `−log P(Y ≤ threshold)` under the Gaussian predictive. Lower is
/// better.
pub fn log_loss_censored(thresholds: &[f64], mu: &[f64], var: &[f64]) -> Result<f64> {
    check_len(thresholds.len(), mu.len())?;
    check_len(thresholds.len(), var.len())?;
    if let Some(v) = var.iter().find(|v| !(**v > 0.0)) {
        return Err(Error::invalid("var", format!("nonpositive variance {v}")));
    }
    let s: f64 = thresholds.iter().zip(mu).zip(var).map(|((t, m), v)| -ln_cdf((t - m) / v.sqrt())).sum();
    Ok(s / thresholds.len() as f64)
}

/// Assignment of records to folds through their holes.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldAssignment {
    pub k: usize,
    /// Test fold of each record; `None` records are always in training.
    pub record_fold: Vec<Option<usize>>,
}

impl FoldAssignment {
    /// A single train/test split.
    pub fn holdout(test: &[bool]) -> Self {
        FoldAssignment { k: 1, record_fold: test.iter().map(|&t| t.then_some(0)).collect() }
    }

    pub fn test_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.record_fold.len()).filter(|&i| self.record_fold[i] == Some(fold)).collect()
    }

    pub fn train_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.record_fold.len()).filter(|&i| self.record_fold[i] != Some(fold)).collect()
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut s = vec![0; self.k];
        for f in self.record_fold.iter().flatten() {
            s[*f] += 1;
        }
        s
    }
}

/// Shuffles the holes, then gives each to the fold with the fewest records
/// so far (ties to the lowest fold).
pub fn borehole_folds(hole_ids: &[String], k: usize, rng: &mut Rng) -> Result<FoldAssignment> {
    let mut holes: Vec<(&str, Vec<usize>)> = Vec::new();
    let mut pos = std::collections::HashMap::new();
    for (i, h) in hole_ids.iter().enumerate() {
        let j = *pos.entry(h.as_str()).or_insert_with(|| {
            holes.push((h.as_str(), Vec::new()));
            holes.len() - 1
        });
        holes[j].1.push(i);
    }
    if k == 0 || holes.len() < k {
        return Err(Error::InsufficientData(format!("{} holes for {k} folds", holes.len())));
    }
    holes.shuffle(rng);
    let mut sizes = vec![0usize; k];
    let mut record_fold = vec![None; hole_ids.len()];
    for (_, recs) in &holes {
        let f = (0..k).min_by_key(|&f| (sizes[f], f)).expect("k > 0");
        sizes[f] += recs.len();
        for &i in recs {
            record_fold[i] = Some(f);
        }
    }
    Ok(FoldAssignment { k, record_fold })
}

/// A random split with `⌊n·test_frac⌋` test records.
pub fn random_split(n: usize, test_frac: f64, rng: &mut Rng) -> Vec<bool> {
    let n_test = ((n as f64) * test_frac).floor() as usize;
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(rng);
    let mut test = vec![false; n];
    for &i in &perm[..n_test.min(n)] {
        test[i] = true;
    }
    test
}

/// `m` of `0..n` drawn uniformly without replacement, sorted.
pub fn subset_indices(n: usize, m: usize, rng: &mut Rng) -> Vec<usize> {
    if m >= n {
        return (0..n).collect();
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(rng);
    let mut s = perm[..m].to_vec();
    s.sort_unstable();
    s
}

/// Exact GP fitted by maximum likelihood on a uniform random subset of size
/// `m`.
pub fn subset_gp(x: &Points, y: &[f64], m: usize, family: Family, mle: &MleOptions, rng: &mut Rng) -> Result<GpFit> {
    if m == 0 || m > x.len() {
        return Err(Error::invalid("m", format!("subset of {m} from {} points", x.len())));
    }
    let idx = subset_indices(x.len(), m, rng);
    let xs = x.select(&idx);
    let ys: Vec<f64> = idx.iter().map(|&i| y[i]).collect();
    let init = default_init(&xs, family, true)?;
    fit_mle(&xs, &ys, &init, mle)
}

/// Ordinary kriging as run inside the harness: an isotropic variogram fitted
/// by NLS to a random sample of the training data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OkSpec {
    pub family: Family,
    /// Largest lag as a fraction of the sample's bounding-box diagonal.
    pub h_max_frac: f64,
    pub n_bins: usize,
    pub n_fit: usize,
    pub weights: NlsWeights,
    pub options: OkOptions,
}

impl Default for OkSpec {
    fn default() -> Self {
        OkSpec {
            family: Family::PowerExp { p: 1.0 },
            h_max_frac: 0.5,
            n_bins: 15,
            n_fit: 3000,
            weights: NlsWeights::PairCount,
            options: OkOptions { parallel: true, ..OkOptions::default() },
        }
    }
}

/// The variogram [`ModelSpec::Ok`] kriges with.
pub fn fit_ok_variogram(spec: &OkSpec, x: &Points, y: &[f64], rng: &mut Rng) -> Result<VariogramModel> {
    let idx = subset_indices(x.len(), spec.n_fit, rng);
    let xs = x.select(&idx);
    let ys: Vec<f64> = idx.iter().map(|&i| y[i]).collect();
    let diag = xs.column_ranges().iter().map(|(a, b)| (b - a) * (b - a)).sum::<f64>().sqrt();
    let h_max = spec.h_max_frac * diag;
    let ev = empirical_semivariogram(&xs, &ys, h_max / spec.n_bins as f64, h_max)?;
    Ok(fit_nls(&ev, spec.family, spec.weights, &NlsBounds::default())?.model)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "model")]
pub enum ModelSpec {
    Subset { m: usize, family: Family, mle: MleOptions },
    Lagp { lagp: LagpConfig, remediate: bool },
    Slagp { lagp: LagpConfig, scales: GlobalScaleOptions, remediate: bool },
    Svecchia(SVecchiaConfig),
    Ok(OkSpec),
}

impl ModelSpec {
    pub fn name(&self) -> &'static str {
        match self {
            ModelSpec::Subset { .. } => "subset",
            ModelSpec::Lagp { .. } => "lagp",
            ModelSpec::Slagp { .. } => "slagp",
            ModelSpec::Svecchia(_) => "svecchia",
            ModelSpec::Ok(_) => "ok",
        }
    }

    /// The model with its defaults.
    pub fn default_for(name: &str) -> Result<ModelSpec> {
        Ok(match name {
            "subset" => ModelSpec::Subset { m: 2000, family: Family::GAUSSIAN, mle: MleOptions::default() },
            "lagp" => ModelSpec::Lagp { lagp: LagpConfig::default(), remediate: false },
            "slagp" => ModelSpec::Slagp {
                lagp: LagpConfig::default(),
                scales: GlobalScaleOptions::default(),
                remediate: false,
            },
            "svecchia" => ModelSpec::Svecchia(SVecchiaConfig::default()),
            "ok" => ModelSpec::Ok(OkSpec::default()),
            other => return Err(Error::invalid("model", format!("unknown model `{other}`"))),
        })
    }
}

/// Moments at the test sites from one trained model.
#[derive(Clone, Debug)]
pub struct ModelPrediction {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub errors: Vec<Option<SiteError>>,
    pub cov: Option<faer::Mat<f64>>,
    pub fit_seconds: f64,
    pub predict_seconds: f64,
}

/// Trains `model` on `(x, y)` and predicts at `xstar`.
pub fn fit_predict(
    model: &ModelSpec,
    x: &Points,
    y: &[f64],
    xstar: &Points,
    full_cov: bool,
    seeds: &SeedStream,
) -> Result<ModelPrediction> {
    let t0 = Instant::now();
    let ok = |mean: Vec<f64>, var: Vec<f64>, cov, fit_s: f64, t1: Instant| {
        let n = mean.len();
        ModelPrediction {
            mean,
            var,
            errors: vec![None; n],
            cov,
            fit_seconds: fit_s,
            predict_seconds: t1.elapsed().as_secs_f64(),
        }
    };
    match model {
        ModelSpec::Subset { m, family, mle } => {
            let fit = subset_gp(x, y, (*m).min(x.len()), *family, mle, &mut seeds.rng("subset"))?;
            let fit_s = t0.elapsed().as_secs_f64();
            let t1 = Instant::now();
            let p = fit.predict(xstar, full_cov)?;
            Ok(ok(p.mean, p.var, p.cov, fit_s, t1))
        }
        ModelSpec::Lagp { lagp, remediate } => {
            let train = TrainingSet::new(x.clone(), y.to_vec())?;
            let fit_s = t0.elapsed().as_secs_f64();
            let t1 = Instant::now();
            let mut batch = lagp_predict_batch(&train, xstar, &lagp.fit_to_size(x.len()))?;
            if *remediate {
                batch = remediate_batch(&train, &batch)?;
            }
            let p = batch.prediction;
            Ok(ModelPrediction { errors: p.errors, ..ok(p.mean, p.var, None, fit_s, t1) })
        }
        ModelSpec::Slagp { lagp, scales, remediate } => {
            let sc = estimate_global_lengthscales(x, y, scales, &mut seeds.rng("scales"))?;
            let train = TrainingSet::new(prescale_inputs(x, &sc.theta)?, y.to_vec())?;
            let fit_s = t0.elapsed().as_secs_f64();
            let t1 = Instant::now();
            let cfg = LagpConfig { local_ard: false, ..lagp.fit_to_size(x.len()) };
            let mut batch = lagp_predict_batch(&train, &prescale_inputs(xstar, &sc.theta)?, &cfg)?;
            if *remediate {
                batch = remediate_batch(&train, &batch)?;
            }
            let p = batch.prediction;
            Ok(ModelPrediction { errors: p.errors, ..ok(p.mean, p.var, None, fit_s, t1) })
        }
        ModelSpec::Svecchia(cfg) => {
            let fit = fit_svecchia(x, y, &cfg.fit_to_size(x.len()), &mut seeds.rng("svecchia"))?;
            let fit_s = t0.elapsed().as_secs_f64();
            let t1 = Instant::now();
            let p = fit
                .conditioner
                .predict(xstar, &VecchiaPredictOptions { full_cov, parallel: cfg.parallel, ..Default::default() })?;
            Ok(ok(p.mean, p.var, p.cov, fit_s, t1))
        }
        ModelSpec::Ok(spec) => {
            let vm = fit_ok_variogram(spec, x, y, &mut seeds.rng("variogram"))?;
            let fit_s = t0.elapsed().as_secs_f64();
            let t1 = Instant::now();
            let p = ok_predict(&vm, x, y, xstar, &spec.options)?;
            Ok(ModelPrediction { errors: p.errors, ..ok(p.mean, p.var, None, fit_s, t1) })
        }
    }
}

/// How censored training records enter a fit.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CensoredTraining {
    /// Use the recorded threshold as if observed.
    #[default]
    AsRecorded,
    Drop,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CvOptions {
    pub censored: CensoredTraining,
    /// Compute the full-covariance score (dense in the fold size).
    pub full_cov: bool,
    /// Record wall-clock times.
    pub timings: bool,
    pub parallel_folds: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub fold: usize,
    pub n_train: usize,
    pub n_test: usize,
    /// Over uncensored test records without an error code.
    pub rmse: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub score_f: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub score_p: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub log_loss: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fit_seconds: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub predict_seconds: Option<f64>,
    pub n_errors: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CvSummary {
    pub median_rmse: f64,
    pub mean_rmse: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub median_score_p: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub median_score_f: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub median_log_loss: Option<f64>,
    pub n_errors: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub model: String,
    pub k: usize,
    pub seed: u64,
    pub folds: Vec<MetricsRecord>,
    pub summary: CvSummary,
}

fn median_of(v: impl Iterator<Item = f64>) -> Option<f64> {
    let mut v: Vec<f64> = v.collect();
    if v.is_empty() {
        None
    } else {
        Some(crate::locality::median(&mut v))
    }
}

/// Scores one prediction against the test records of `d` at `test`.
/// RMSE, full score, pointwise score, censored log-loss and error count.
type FoldScores = (f64, Option<f64>, Option<f64>, Option<f64>, usize);

fn score_fold(d: &Dataset, test: &[usize], p: &ModelPrediction) -> Result<FoldScores> {
    let usable: Vec<usize> = (0..test.len()).filter(|&k| p.errors[k].is_none() && p.mean[k].is_finite()).collect();
    let n_errors = test.len() - usable.len();
    let obs: Vec<usize> = usable.iter().copied().filter(|&k| !d.censor.censored[test[k]]).collect();
    let cens: Vec<usize> = usable.iter().copied().filter(|&k| d.censor.censored[test[k]]).collect();
    let y: Vec<f64> = obs.iter().map(|&k| d.y[test[k]]).collect();
    let mu: Vec<f64> = obs.iter().map(|&k| p.mean[k]).collect();
    let var: Vec<f64> = obs.iter().map(|&k| p.var[k]).collect();
    let r = if obs.is_empty() { f64::NAN } else { rmse(&y, &mu)? };
    let sp = if !obs.is_empty() && var.iter().all(|v| *v > 0.0) { Some(score_pointwise(&y, &mu, &var)?) } else { None };
    let sf = match &p.cov {
        Some(c) if !obs.is_empty() && n_errors == 0 => {
            let sub = faer::Mat::from_fn(obs.len(), obs.len(), |a, b| c[(obs[a], obs[b])]);
            score_full(&y, &mu, sub.as_ref()).ok()
        }
        _ => None,
    };
    let ll = if cens.is_empty() || cens.iter().any(|&k| !(p.var[k] > 0.0)) {
        None
    } else {
        let t: Vec<f64> = cens.iter().map(|&k| d.censor.threshold[test[k]].expect("censored")).collect();
        let mu: Vec<f64> = cens.iter().map(|&k| p.mean[k]).collect();
        let var: Vec<f64> = cens.iter().map(|&k| p.var[k]).collect();
        Some(log_loss_censored(&t, &mu, &var)?)
    };
    Ok((r, sf, sp, ll, n_errors))
}

/// K-fold evaluation of `model` on `d` over the given folds. Fold `f` draws
/// its randomness from `seeds.nth(f)`, so folds and models are independent.
pub fn run_cv(
    d: &Dataset,
    folds: &FoldAssignment,
    model: &ModelSpec,
    seeds: &SeedStream,
    opts: &CvOptions,
) -> Result<CvReport> {
    if folds.record_fold.len() != d.len() {
        return Err(Error::DimensionMismatch { expected: d.len(), found: folds.record_fold.len() });
    }
    let one = |f: usize| -> Result<MetricsRecord> {
        let test = folds.test_indices(f);
        let train: Vec<usize> = folds
            .train_indices(f)
            .into_iter()
            .filter(|&i| opts.censored == CensoredTraining::AsRecorded || !d.censor.censored[i])
            .collect();
        let xt = d.x.select(&train);
        let yt: Vec<f64> = train.iter().map(|&i| d.y[i]).collect();
        let p = fit_predict(model, &xt, &yt, &d.x.select(&test), opts.full_cov, &seeds.nth(f as u64))?;
        let (rmse, score_f, score_p, log_loss, n_errors) = score_fold(d, &test, &p)?;
        log::info!("{} fold {f}: rmse {rmse:.4}", model.name());
        Ok(MetricsRecord {
            fold: f,
            n_train: train.len(),
            n_test: test.len(),
            rmse,
            score_f,
            score_p,
            log_loss,
            fit_seconds: opts.timings.then_some(p.fit_seconds),
            predict_seconds: opts.timings.then_some(p.predict_seconds),
            n_errors,
        })
    };
    let records: Result<Vec<MetricsRecord>> = if opts.parallel_folds {
        (0..folds.k).into_par_iter().map(one).collect()
    } else {
        (0..folds.k).map(one).collect()
    };
    let records = records?;
    let summary = CvSummary {
        median_rmse: median_of(records.iter().map(|r| r.rmse).filter(|v| v.is_finite())).unwrap_or(f64::NAN),
        mean_rmse: {
            let v: Vec<f64> = records.iter().map(|r| r.rmse).filter(|v| v.is_finite()).collect();
            v.iter().sum::<f64>() / v.len().max(1) as f64
        },
        median_score_p: median_of(records.iter().filter_map(|r| r.score_p)),
        median_score_f: median_of(records.iter().filter_map(|r| r.score_f)),
        median_log_loss: median_of(records.iter().filter_map(|r| r.log_loss)),
        n_errors: records.iter().map(|r| r.n_errors).sum(),
    };
    Ok(CvReport { model: model.name().to_string(), k: folds.k, seed: seeds.seed(), folds: records, summary })
}

/// One CSV line per fold and model.
pub fn metrics_csv(reports: &[CvReport]) -> String {
    let opt = |v: Option<f64>| v.map(fmt_f64).unwrap_or_default();
    let mut s =
        String::from("model,fold,n_train,n_test,rmse,score_f,score_p,log_loss,n_errors,fit_seconds,predict_seconds\n");
    for r in reports {
        for f in &r.folds {
            s.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{}\n",
                r.model,
                f.fold,
                f.n_train,
                f.n_test,
                fmt_f64(f.rmse),
                opt(f.score_f),
                opt(f.score_p),
                opt(f.log_loss),
                f.n_errors,
                opt(f.fit_seconds),
                opt(f.predict_seconds)
            ));
        }
    }
    s
}
