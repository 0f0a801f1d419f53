//! `gpkrige`: fit, predict, cross-validate and impute from assay CSV files.

mod commands;
mod config;
mod fitfile;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

pub type CliResult<T> = Result<T, Box<dyn std::error::Error + Send + Sync>>;

#[derive(Parser, Debug)]
#[command(name = "gpkrige", version, about = "Gaussian-process regression and kriging for assay data")]
pub struct Cli {
    /// Seed for every random choice.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads; 1 selects the serial path.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// TOML or JSON file overriding the defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// More log output (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

/// Where the assay records come from and how to read them.
#[derive(Args, Debug, Clone)]
pub struct DataArgs {
    /// Assay CSV.
    #[arg(long)]
    pub data: PathBuf,
    /// Coordinate columns; defaults to whichever of x,y,z the file has.
    #[arg(long, value_delimiter = ',')]
    pub coords: Option<Vec<String>>,
    /// Response column.
    #[arg(long)]
    pub value: Option<String>,
    /// Model the natural log of the response.
    #[arg(long)]
    pub log_response: bool,
    /// Leave censored records out of training.
    #[arg(long)]
    pub drop_censored: bool,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Train a model and write it as JSON.
    Fit {
        #[command(flatten)]
        data: DataArgs,
        /// gp, subset, lagp, slagp, svecchia or ok.
        #[arg(long)]
        model: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Predict at new sites from a fit and its training data.
    Predict {
        #[arg(long)]
        fit: PathBuf,
        #[command(flatten)]
        data: DataArgs,
        /// CSV with the fit's coordinate columns.
        #[arg(long)]
        sites: PathBuf,
        /// Predictions CSV; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write the joint predictive covariance here.
        #[arg(long)]
        full_cov: Option<PathBuf>,
        /// Predict even if the data do not match the fit's fingerprint.
        #[arg(long)]
        force: bool,
    },
    /// Empirical semivariogram and a fitted model.
    Variogram {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        bin_width: Option<f64>,
        /// Largest lag, in coded units.
        #[arg(long)]
        h_max: Option<f64>,
        /// gaussian, exponential, powexp(p), matern32 or matern52.
        #[arg(long, default_value = "exponential")]
        family: String,
        /// nls, eyeball or none.
        #[arg(long, default_value = "nls")]
        method: String,
        /// Lag cutoff of the eyeball fit.
        #[arg(long)]
        eyeball_h_max: Option<f64>,
        /// Weight bins by pair count.
        #[arg(long)]
        pair_weights: bool,
        /// Empirical variogram CSV; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Fitted model JSON.
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Borehole-preserving K-fold cross-validation over shared folds.
    Cv {
        #[command(flatten)]
        data: DataArgs,
        /// Comma-separated models.
        #[arg(long, value_delimiter = ',')]
        models: Option<Vec<String>>,
        #[arg(long)]
        model: Option<String>,
        #[arg(long)]
        k: Option<usize>,
        /// Metrics JSON; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Flat per-fold metrics CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
        /// Record wall-clock times (breaks byte-identical reruns).
        #[arg(long)]
        timings: bool,
        /// Score with the joint covariance where the model provides one.
        #[arg(long)]
        full_cov: bool,
    },
    /// Multiple imputation of censored records.
    Impute {
        #[command(flatten)]
        data: DataArgs,
        /// lagp, slagp or svecchia.
        #[arg(long)]
        engine: Option<String>,
        #[arg(long)]
        imputations: Option<usize>,
        /// Sites to predict at from the pooled imputations.
        #[arg(long)]
        sites: Option<PathBuf>,
        /// Records with one column per imputation; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        predictions: Option<PathBuf>,
    },
    /// Generate synthetic data.
    Synth {
        /// One-dimensional sinusoid toy.
        #[arg(long, conflicts_with = "boreholes")]
        toy1d: bool,
        /// Use 2 sin(4πx) instead of 2 + 2 sin(4πx).
        #[arg(long)]
        centered: bool,
        #[arg(long)]
        boreholes: bool,
        #[arg(long, default_value_t = 20)]
        n: usize,
        #[arg(long, default_value_t = 0.1)]
        noise: f64,
        /// Left-censor the toy at this level.
        #[arg(long)]
        threshold: Option<f64>,
        #[arg(long, default_value_t = 4000)]
        holes: usize,
        #[arg(long, default_value_t = 40)]
        pts_per_hole: usize,
        #[arg(long, default_value_t = 0.4)]
        censor_frac: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
