//! Run configuration: every library default in one document, overridable
//! from a TOML or JSON file and then from command-line flags.

use std::path::Path;

use gpkrige::censoring::ImputeConfig;
use gpkrige::data::AssaySchema;
use gpkrige::evaluation::{CvOptions, OkSpec};
use gpkrige::gp::MleOptions;
use gpkrige::kernel::Family;
use gpkrige::lagp::LagpConfig;
use gpkrige::locality::GlobalScaleOptions;
use gpkrige::vecchia::SVecchiaConfig;
use serde::{Deserialize, Serialize};

use crate::CliResult;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub model: String,
    /// Kernel family of the exact and subset GPs.
    pub family: Family,
    pub k: usize,
    pub subset_m: usize,
    pub log_response: bool,
    pub drop_censored: bool,
    pub schema: AssaySchema,
    pub mle: MleOptions,
    pub lagp: LagpConfig,
    pub scales: GlobalScaleOptions,
    pub svecchia: SVecchiaConfig,
    pub ok: OkSpec,
    pub cv: CvOptions,
    pub impute: ImputeConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            model: "gp".into(),
            family: Family::GAUSSIAN,
            k: 10,
            subset_m: 2000,
            log_response: false,
            drop_censored: false,
            schema: AssaySchema::default(),
            mle: MleOptions::default(),
            lagp: LagpConfig::default(),
            scales: GlobalScaleOptions::default(),
            svecchia: SVecchiaConfig::default(),
            ok: OkSpec::default(),
            cv: CvOptions::default(),
            impute: ImputeConfig::default(),
        }
    }
}

pub const MODELS: [&str; 6] = ["gp", "subset", "lagp", "slagp", "svecchia", "ok"];

impl RunConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        let cfg = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?
        } else {
            toml::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?
        };
        Ok(cfg)
    }

    pub fn validate(&self) -> CliResult<()> {
        let bad = |msg: String| -> CliResult<()> { Err(msg.into()) };
        if !MODELS.contains(&self.model.as_str()) {
            return bad(format!("unknown model `{}` (expected one of {})", self.model, MODELS.join(", ")));
        }
        self.family.validate()?;
        self.lagp.family.validate()?;
        if self.k < 2 {
            return bad(format!("k = {} folds; need at least 2", self.k));
        }
        if self.subset_m == 0 || self.lagp.m < 2 || self.svecchia.m == 0 {
            return bad("subset_m, lagp.m and svecchia.m must be positive (lagp.m at least 2)".into());
        }
        if self.impute.n_imputations == 0 {
            return bad("impute.n_imputations must be positive".into());
        }
        if self.svecchia.max_rounds == 0 {
            return bad("svecchia.max_rounds must be positive".into());
        }
        if self.schema.coords.is_empty() {
            return bad("schema.coords is empty".into());
        }
        Ok(())
    }

    /// Forces every library routine onto its serial path.
    pub fn serial(&mut self) {
        self.lagp.parallel = false;
        self.scales.parallel = false;
        self.svecchia.parallel = false;
        self.ok.options.parallel = false;
        self.cv.parallel_folds = false;
        self.impute.parallel = false;
        self.impute.lagp.parallel = false;
        self.impute.scales.parallel = false;
        self.impute.svecchia.parallel = false;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_round_trip() {
        let c = RunConfig::default();
        c.validate().unwrap();
        let t = toml::to_string(&c).unwrap();
        assert_eq!(toml::from_str::<RunConfig>(&t).unwrap(), c);
        let partial: RunConfig = toml::from_str("model = \"svecchia\"\n[svecchia]\nm = 10\n").unwrap();
        assert_eq!(partial.svecchia.m, 10);
        assert_eq!(partial.lagp.m, 50);
        assert!(toml::from_str::<RunConfig>("modle = \"x\"").is_err());
    }
}
