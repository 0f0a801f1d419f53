//! The serialized fit: a self-describing JSON document holding the model,
//! its hyperparameters, the input coding and a fingerprint of the training
//! data it belongs to.

use gpkrige::data::{Coding, RawAssay};
use gpkrige::kernel::Hyperparams;
use gpkrige::lagp::LagpConfig;
use gpkrige::variogram::{OkOptions, VariogramModel};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const FORMAT: &str = "gpkrige-fit";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum FittedModel {
    Gp {
        phi: Hyperparams,
    },
    Subset {
        phi: Hyperparams,
        /// Training records the subset GP conditions on.
        indices: Vec<usize>,
    },
    Lagp {
        lagp: LagpConfig,
        remediate: bool,
    },
    Slagp {
        theta: Vec<f64>,
        lagp: LagpConfig,
        remediate: bool,
    },
    Svecchia {
        phi: Hyperparams,
        m: usize,
        loglik: f64,
    },
    Ok {
        variogram: VariogramModel,
        options: OkOptions,
    },
}

impl FittedModel {
    pub fn name(&self) -> &'static str {
        match self {
            FittedModel::Gp { .. } => "gp",
            FittedModel::Subset { .. } => "subset",
            FittedModel::Lagp { .. } => "lagp",
            FittedModel::Slagp { .. } => "slagp",
            FittedModel::Svecchia { .. } => "svecchia",
            FittedModel::Ok { .. } => "ok",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitFile {
    pub format: String,
    pub version: u32,
    pub seed: u64,
    /// SHA-256 of the training records, see [`fingerprint`].
    pub fingerprint: String,
    pub n_records: usize,
    pub coords: Vec<String>,
    pub drop_censored: bool,
    pub coding: Coding,
    pub fit: FittedModel,
}

/// Hash of every record's coordinates, value, censoring flag, detection
/// limit and hole id, in file order.
pub fn fingerprint(raw: &RawAssay) -> String {
    let mut h = Sha256::new();
    h.update((raw.x.dim() as u64).to_le_bytes());
    h.update((raw.len() as u64).to_le_bytes());
    for i in 0..raw.len() {
        for v in raw.x.row(i) {
            h.update(v.to_le_bytes());
        }
        h.update(raw.value[i].to_le_bytes());
        h.update([u8::from(raw.censor.censored[i])]);
        h.update(raw.censor.threshold[i].unwrap_or(f64::NAN).to_le_bytes());
        h.update((raw.hole_id[i].len() as u64).to_le_bytes());
        h.update(raw.hole_id[i].as_bytes());
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}
