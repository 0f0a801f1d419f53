use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use gpkrige::censoring::{multiple_impute, ImputeEngine};
use gpkrige::data::{
    fmt_f64, load_assay_csv, load_points_csv, write_assay_csv, write_predictions_csv, Dataset, RawAssay,
};
use gpkrige::error::SiteError;
use gpkrige::evaluation::{
    borehole_folds, fit_ok_variogram, metrics_csv, run_cv, subset_indices, CensoredTraining, ModelSpec,
};
use gpkrige::gp::{default_init, fit_mle, GpFit, PredictiveDistribution};
use gpkrige::kernel::Family;
use gpkrige::lagp::{lagp_predict_batch, remediate_batch, LagpConfig, TrainingSet};
use gpkrige::locality::{estimate_global_lengthscales, prescale_inputs};
use gpkrige::points::Points;
use gpkrige::rng::SeedStream;
use gpkrige::synth::{gen_synthetic_1d, gen_synthetic_boreholes, BoreholeConfig, Toy1d};
use gpkrige::variogram::{empirical_semivariogram, fit_eyeball, fit_nls, ok_predict, NlsBounds, NlsWeights};
use gpkrige::vecchia::{fit_svecchia, Conditioner, VecchiaPredictOptions};
use serde_json::json;

use crate::config::RunConfig;
use crate::fitfile::{fingerprint, FitFile, FittedModel, FORMAT, VERSION};
use crate::{Cli, CliResult, Command, DataArgs};

pub fn run(cli: Cli) -> CliResult<()> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(t) = cli.threads {
        if t == 0 {
            return Err("--threads must be positive".into());
        }
        rayon::ThreadPoolBuilder::new().num_threads(t).build_global()?;
        if t == 1 {
            cfg.serial();
        }
    }
    let seeds = SeedStream::new(cfg.seed);
    match cli.command {
        Command::Fit { data, model, out } => {
            if let Some(m) = model {
                cfg.model = m;
            }
            cfg.validate()?;
            fit(&cfg, &data, &out, &seeds)
        }
        Command::Predict { fit, data, sites, out, full_cov, force } => {
            predict(&cfg, &fit, &data, &sites, out.as_deref(), full_cov.as_deref(), force)
        }
        Command::Variogram { data, bin_width, h_max, family, method, eyeball_h_max, pair_weights, out, json } => {
            cfg.validate()?;
            let (_, d) = load(&cfg, &data)?;
            let family: Family = family.parse()?;
            let diag = diagonal(&d.x);
            let h_max = h_max.unwrap_or(0.5 * diag);
            let bin_width = bin_width.unwrap_or(h_max / 15.0);
            let ev = empirical_semivariogram(&d.x, &d.y, bin_width, h_max)?;
            let mut w = sink(out.as_deref())?;
            writeln!(w, "bin_center,gamma_hat,pair_count")?;
            for i in 0..ev.n_bins() {
                let g = ev.gamma_hat[i].map(fmt_f64).unwrap_or_default();
                writeln!(w, "{},{},{}", fmt_f64(ev.bin_centers[i]), g, ev.pair_counts[i])?;
            }
            w.flush()?;
            let weights = if pair_weights { NlsWeights::PairCount } else { NlsWeights::Equal };
            let fitted = match method.as_str() {
                "nls" => Some(fit_nls(&ev, family, weights, &NlsBounds::default())?),
                "eyeball" => Some(fit_eyeball(
                    &ev,
                    family,
                    eyeball_h_max.unwrap_or(h_max / 2.0),
                    weights,
                    &NlsBounds::default(),
                )?),
                "none" => None,
                other => return Err(format!("unknown variogram method `{other}`").into()),
            };
            if let (Some(path), Some(f)) = (json, fitted) {
                let doc = json!({
                    "method": method,
                    "model": f.model,
                    "loss": f.loss,
                    "converged": f.converged,
                    "empirical": ev,
                });
                write_json(&path, &doc)?;
            }
            Ok(())
        }
        Command::Cv { data, models, model, k, out, csv, timings, full_cov } => {
            if let Some(k) = k {
                cfg.k = k;
            }
            cfg.cv.timings |= timings;
            cfg.cv.full_cov |= full_cov;
            cfg.validate()?;
            let names = models.or(model.map(|m| vec![m])).unwrap_or_else(|| vec![cfg.model.clone()]);
            cv(&cfg, &data, &names, out.as_deref(), csv.as_deref(), &seeds)
        }
        Command::Impute { data, engine, imputations, sites, out, predictions } => {
            if let Some(e) = engine {
                cfg.impute.engine = serde_json::from_value(json!(e)).map_err(|_| format!("unknown engine `{e}`"))?;
            }
            if let Some(m) = imputations {
                cfg.impute.n_imputations = m;
            }
            cfg.validate()?;
            impute(&cfg, &data, sites.as_deref(), out.as_deref(), predictions.as_deref(), &seeds)
        }
        Command::Synth { toy1d, centered, boreholes, n, noise, threshold, holes, pts_per_hole, censor_frac, out } => {
            let w = sink(out.as_deref())?;
            if boreholes {
                let bc = BoreholeConfig { n_holes: holes, pts_per_hole, censor_frac, ..BoreholeConfig::default() };
                let s = gen_synthetic_boreholes(&bc, &mut seeds.rng("synth"))?;
                let names: Vec<String> = ["x", "y", "z"].iter().map(|s| s.to_string()).collect();
                write_raw(w, &names, &s.raw)
            } else {
                if !toy1d {
                    log::info!("no generator chosen; writing the 1d toy");
                }
                let variant = if centered { Toy1d::Centered } else { Toy1d::Shifted };
                let s = gen_synthetic_1d(n, noise, threshold, variant, &mut seeds.rng("synth"))?;
                let d = &s.dataset;
                write_assay_csv(w, &["x".to_string()], &d.x, &d.y, &d.hole_id, &d.censor, None)?;
                Ok(())
            }
        }
    }
}

fn write_raw<W: Write>(w: W, names: &[String], raw: &RawAssay) -> CliResult<()> {
    write_assay_csv(w, names, &raw.x, &raw.value, &raw.hole_id, &raw.censor, None)?;
    Ok(())
}

fn sink(path: Option<&Path>) -> CliResult<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p).map_err(|e| format!("{}: {e}", p.display()))?)),
        None => Box::new(BufWriter::new(std::io::stdout())),
    })
}

fn write_json(path: &Path, v: &impl serde::Serialize) -> CliResult<()> {
    let mut w = sink(Some(path))?;
    serde_json::to_writer_pretty(&mut w, v)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn diagonal(x: &Points) -> f64 {
    x.column_ranges().iter().map(|(a, b)| (b - a) * (b - a)).sum::<f64>().sqrt()
}

/// Reads the assay file, keeping only schema columns the header has.
fn load(cfg: &RunConfig, args: &DataArgs) -> CliResult<(RawAssay, Dataset)> {
    let raw = load_raw(cfg, args)?;
    let log_response = cfg.log_response || args.log_response;
    let d = raw.code(log_response)?;
    Ok((raw, d))
}

fn load_raw(cfg: &RunConfig, args: &DataArgs) -> CliResult<RawAssay> {
    let mut schema = cfg.schema.clone();
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(&args.data)
        .map_err(|e| format!("{}: {e}", args.data.display()))?;
    let headers: Vec<String> =
        rdr.headers().map_err(|e| format!("{}: {e}", args.data.display()))?.iter().map(str::to_string).collect();
    let has = |c: &Option<String>| c.as_ref().is_some_and(|c| headers.contains(c));
    if !has(&schema.hole_id) {
        schema.hole_id = None;
    }
    if !has(&schema.censored) {
        schema.censored = None;
    }
    if !has(&schema.detection_limit) {
        schema.detection_limit = None;
    }
    match &args.coords {
        Some(c) => schema.coords = c.clone(),
        None => {
            let present: Vec<String> = schema.coords.iter().filter(|c| headers.contains(c)).cloned().collect();
            if !present.is_empty() {
                schema.coords = present;
            }
        }
    }
    if let Some(v) = &args.value {
        schema.value = v.clone();
    }
    Ok(load_assay_csv(&args.data, &schema)?)
}

fn coord_names(raw_dim: usize, cfg: &RunConfig, args: &DataArgs, path: &Path) -> CliResult<Vec<String>> {
    if let Some(c) = &args.coords {
        return Ok(c.clone());
    }
    let headers: Vec<String> = csv::Reader::from_path(path)?.headers()?.iter().map(|s| s.trim().to_string()).collect();
    let present: Vec<String> = cfg.schema.coords.iter().filter(|c| headers.contains(c)).cloned().collect();
    if present.len() != raw_dim {
        return Err(format!("{}: cannot tell the coordinate columns; pass --coords", path.display()).into());
    }
    Ok(present)
}

/// Records used for training: all, or the uncensored ones.
fn training(d: &Dataset, drop_censored: bool) -> (Points, Vec<f64>) {
    let idx: Vec<usize> = if drop_censored { d.censor.observed_indices() } else { (0..d.len()).collect() };
    (d.x.select(&idx), idx.iter().map(|&i| d.y[i]).collect())
}

fn fit(cfg: &RunConfig, args: &DataArgs, out: &Path, seeds: &SeedStream) -> CliResult<()> {
    let (raw, d) = load(cfg, args)?;
    let drop = cfg.drop_censored || args.drop_censored;
    let (x, y) = training(&d, drop);
    let fitted = match cfg.model.as_str() {
        "gp" => {
            let init = default_init(&x, cfg.family, true)?;
            FittedModel::Gp { phi: fit_mle(&x, &y, &init, &cfg.mle)?.phi }
        }
        "subset" => {
            let indices = subset_indices(x.len(), cfg.subset_m, &mut seeds.rng("subset"));
            let xs = x.select(&indices);
            let ys: Vec<f64> = indices.iter().map(|&i| y[i]).collect();
            let init = default_init(&xs, cfg.family, true)?;
            FittedModel::Subset { phi: fit_mle(&xs, &ys, &init, &cfg.mle)?.phi, indices }
        }
        "lagp" => FittedModel::Lagp { lagp: cfg.lagp.fit_to_size(x.len()), remediate: false },
        "slagp" => FittedModel::Slagp {
            theta: estimate_global_lengthscales(&x, &y, &cfg.scales, &mut seeds.rng("scales"))?.theta,
            lagp: cfg.lagp.fit_to_size(x.len()),
            remediate: false,
        },
        "svecchia" => {
            let sv = cfg.svecchia.fit_to_size(x.len());
            if sv.m < cfg.svecchia.m {
                log::warn!("conditioning sets cut to {} for {} records", sv.m, x.len());
            }
            let f = fit_svecchia(&x, &y, &sv, &mut seeds.rng("svecchia"))?;
            FittedModel::Svecchia { phi: f.phi, m: sv.m, loglik: f.loglik }
        }
        "ok" => FittedModel::Ok {
            variogram: fit_ok_variogram(&cfg.ok, &x, &y, &mut seeds.rng("variogram"))?,
            options: cfg.ok.options,
        },
        other => return Err(format!("unknown model `{other}`").into()),
    };
    let doc = FitFile {
        format: FORMAT.into(),
        version: VERSION,
        seed: cfg.seed,
        fingerprint: fingerprint(&raw),
        n_records: raw.len(),
        coords: coord_names(raw.x.dim(), cfg, args, &args.data)?,
        drop_censored: drop,
        coding: d.coding.clone(),
        fit: fitted,
    };
    write_json(out, &doc)
}

fn predict(
    cfg: &RunConfig,
    fit_path: &Path,
    args: &DataArgs,
    sites_path: &Path,
    out: Option<&Path>,
    cov_path: Option<&Path>,
    force: bool,
) -> CliResult<()> {
    let text = std::fs::read_to_string(fit_path).map_err(|e| format!("{}: {e}", fit_path.display()))?;
    let doc: FitFile = serde_json::from_str(&text).map_err(|e| format!("{}: {e}", fit_path.display()))?;
    if doc.format != FORMAT || doc.version != VERSION {
        return Err(format!("{}: not a version {VERSION} {FORMAT} document", fit_path.display()).into());
    }
    let args = DataArgs { coords: Some(doc.coords.clone()), ..args.clone() };
    let raw = load_raw(cfg, &args)?;
    let fp = fingerprint(&raw);
    if fp != doc.fingerprint {
        if !force {
            return Err(format!(
                "{} does not match the data {} was fitted to (fingerprint {} vs {}); pass --force to predict anyway",
                args.data.display(),
                fit_path.display(),
                &fp[..12],
                &doc.fingerprint[..12]
            )
            .into());
        }
        log::warn!("data fingerprint mismatch ignored");
    }
    let d = raw.code_using(&doc.coding)?;
    let (x, y) = training(&d, doc.drop_censored);
    let raw_sites = load_points_csv(sites_path, &doc.coords)?;
    let xs = doc.coding.code_x(&raw_sites)?;
    let full_cov = cov_path.is_some();
    let (p, errors): (PredictiveDistribution, Option<Vec<Option<SiteError>>>) = match &doc.fit {
        FittedModel::Gp { phi } => (GpFit::with_hyperparams(phi.clone(), x, y)?.predict(&xs, full_cov)?, None),
        FittedModel::Subset { phi, indices } => {
            let ys: Vec<f64> = indices.iter().map(|&i| y[i]).collect();
            let f = GpFit::with_hyperparams(phi.clone(), x.select(indices), ys)?;
            (f.predict(&xs, full_cov)?, None)
        }
        FittedModel::Lagp { lagp, remediate } => local(x, y, &xs, lagp, *remediate)?,
        FittedModel::Slagp { theta, lagp, remediate } => {
            let lagp = LagpConfig { local_ard: false, ..lagp.clone() };
            local(prescale_inputs(&x, theta)?, y, &prescale_inputs(&xs, theta)?, &lagp, *remediate)?
        }
        FittedModel::Svecchia { phi, m, .. } => {
            let y_mean = y.iter().sum::<f64>() / y.len() as f64;
            let c = Conditioner::new(phi.clone(), x, &y, y_mean, *m)?;
            let opts = VecchiaPredictOptions { full_cov, parallel: cfg.svecchia.parallel, ..Default::default() };
            (c.predict(&xs, &opts)?, None)
        }
        FittedModel::Ok { variogram, options } => {
            let b = ok_predict(variogram, &x, &y, &xs, options)?;
            let errs = b.errors.clone();
            (b.to_distribution(), Some(errs))
        }
    };
    if full_cov && p.cov.is_none() {
        return Err(format!("model `{}` has no joint predictive covariance", doc.fit.name()).into());
    }
    let mean: Vec<f64> = p.mean.iter().map(|v| v + doc.coding.y_center).collect();
    let codes: Option<Vec<Option<u8>>> = errors.map(|e| e.iter().map(|e| e.map(SiteError::code)).collect());
    let mut w = sink(out)?;
    write_predictions_csv(&mut w, &doc.coords, &raw_sites, &mean, &p.var, codes.as_deref())?;
    w.flush()?;
    if let (Some(path), Some(c)) = (cov_path, &p.cov) {
        let mut w = sink(Some(path))?;
        for i in 0..c.nrows() {
            let row: Vec<String> = (0..c.ncols()).map(|j| fmt_f64(c[(i, j)])).collect();
            writeln!(w, "{}", row.join(","))?;
        }
        w.flush()?;
    }
    Ok(())
}

type Local = (PredictiveDistribution, Option<Vec<Option<SiteError>>>);

fn local(x: Points, y: Vec<f64>, xs: &Points, lagp: &LagpConfig, remediate: bool) -> CliResult<Local> {
    let train = TrainingSet::new(x, y)?;
    let mut b = lagp_predict_batch(&train, xs, lagp)?;
    if remediate {
        b = remediate_batch(&train, &b)?;
    }
    let errs = b.prediction.errors.clone();
    Ok((b.prediction.to_distribution(), Some(errs)))
}

fn model_spec(cfg: &RunConfig, name: &str) -> CliResult<ModelSpec> {
    Ok(match name {
        "gp" => ModelSpec::Subset { m: usize::MAX, family: cfg.family, mle: cfg.mle.clone() },
        "subset" => ModelSpec::Subset { m: cfg.subset_m, family: cfg.family, mle: cfg.mle.clone() },
        "lagp" => ModelSpec::Lagp { lagp: cfg.lagp.clone(), remediate: false },
        "slagp" => ModelSpec::Slagp { lagp: cfg.lagp.clone(), scales: cfg.scales.clone(), remediate: false },
        "svecchia" => ModelSpec::Svecchia(cfg.svecchia.clone()),
        "ok" => ModelSpec::Ok(cfg.ok.clone()),
        other => return Err(format!("unknown model `{other}`").into()),
    })
}

fn cv(
    cfg: &RunConfig,
    args: &DataArgs,
    names: &[String],
    out: Option<&Path>,
    csv_out: Option<&Path>,
    seeds: &SeedStream,
) -> CliResult<()> {
    let (_, d) = load(cfg, args)?;
    let folds = borehole_folds(&d.hole_id, cfg.k, &mut seeds.rng("folds"))?;
    let mut opts = cfg.cv.clone();
    if cfg.drop_censored || args.drop_censored {
        opts.censored = CensoredTraining::Drop;
    }
    let mut reports = Vec::new();
    for name in names {
        let spec = model_spec(cfg, name)?;
        let mut r = run_cv(&d, &folds, &spec, &seeds.child(name), &opts)?;
        r.model = name.clone();
        reports.push(r);
    }
    let doc = json!({
        "seed": cfg.seed,
        "k": cfg.k,
        "n_records": d.len(),
        "fold_sizes": folds.fold_sizes(),
        "reports": reports,
    });
    match out {
        Some(p) => write_json(p, &doc)?,
        None => {
            let mut w = sink(None)?;
            serde_json::to_writer_pretty(&mut w, &doc)?;
            writeln!(w)?;
            w.flush()?;
        }
    }
    if let Some(p) = csv_out {
        let mut w = sink(Some(p))?;
        w.write_all(metrics_csv(&reports).as_bytes())?;
        w.flush()?;
    }
    Ok(())
}

fn impute(
    cfg: &RunConfig,
    args: &DataArgs,
    sites: Option<&Path>,
    out: Option<&Path>,
    pred_out: Option<&Path>,
    seeds: &SeedStream,
) -> CliResult<()> {
    let (raw, d) = load(cfg, args)?;
    let obs = d.censor.observed_indices();
    let cens = d.censor.censored_indices();
    let x_obs = d.x.select(&obs);
    let y_obs: Vec<f64> = obs.iter().map(|&i| d.y[i]).collect();
    let x_cens = d.x.select(&cens);
    let thresholds: Vec<f64> =
        cens.iter().map(|&i| d.censor.threshold[i].expect("censored records carry a threshold")).collect();
    let names = coord_names(raw.x.dim(), cfg, args, &args.data)?;
    let raw_sites = match sites {
        Some(p) => Some(load_points_csv(p, &names)?),
        None => None,
    };
    let xstar = match &raw_sites {
        Some(s) => d.coding.code_x(s)?,
        None => Points::empty(d.x.dim()),
    };
    let run = multiple_impute(
        &x_obs,
        &y_obs,
        &x_cens,
        &thresholds,
        d.censor.direction,
        &xstar,
        &cfg.impute,
        &seeds.child("impute"),
    )?;
    let n_fallback: usize = run.imputations.iter().map(|i| i.imputed.fallback.iter().filter(|f| **f).count()).sum();
    if n_fallback > 0 {
        log::warn!("{n_fallback} imputed values fell back to the threshold");
    }

    let mut w = sink(out)?;
    write!(w, "hole_id,{},value,censored,detection_limit", names.join(","))?;
    for k in 0..run.n_imputations() {
        write!(w, ",imputed_{}", k + 1)?;
    }
    writeln!(w)?;
    let mut slot = vec![None; d.len()];
    for (j, &i) in cens.iter().enumerate() {
        slot[i] = Some(j);
    }
    let decoded: Vec<Vec<f64>> = run.imputations.iter().map(|imp| d.coding.decode_y(&imp.imputed.values)).collect();
    for i in 0..d.len() {
        let coords: Vec<String> = raw.x.row(i).iter().map(|v| fmt_f64(*v)).collect();
        let dl = raw.censor.threshold[i].map(fmt_f64).unwrap_or_default();
        write!(
            w,
            "{},{},{},{},{}",
            raw.hole_id[i],
            coords.join(","),
            fmt_f64(raw.value[i]),
            u8::from(raw.censor.censored[i]),
            dl
        )?;
        for dec in &decoded {
            let v = slot[i].map_or(raw.value[i], |j| dec[j]);
            write!(w, ",{}", fmt_f64(v))?;
        }
        writeln!(w)?;
    }
    w.flush()?;

    if let Some(s) = &raw_sites {
        let p = run.pooled();
        let mean: Vec<f64> = p.mean.iter().map(|v| v + d.coding.y_center).collect();
        let mut w = sink(pred_out)?;
        write_predictions_csv(&mut w, &names, s, &mean, &p.var, None)?;
        w.flush()?;
    }
    let summary = json!({
        "engine": match run.engine {
            ImputeEngine::Lagp => "lagp",
            ImputeEngine::Slagp => "slagp",
            ImputeEngine::Svecchia => "svecchia",
        },
        "n_censored": cens.len(),
        "n_imputations": run.n_imputations(),
        "fallbacks": n_fallback,
    });
    log::info!("{summary}");
    Ok(())
}
