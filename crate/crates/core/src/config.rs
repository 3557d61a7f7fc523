//! Sectioned experiment configuration.
//!
//! ```toml
//! [data]
//! path = "data/seq.coevoseq"   # or a [data.synthetic] table
//! window = 1209600.0
//!
//! [model]
//! span = 3
//! fusion = "attention"
//!
//! [eval]
//! subsample = true
//!
//! [output]
//! directory = "runs/a"
//! ```
//!
//! Every section and key is optional; unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{CoevoError, Result};
use crate::eval::EvalSettings;
use crate::graph::SyntheticSpec;
use crate::training::TrainConfig;

/// Environment variable overriding the configured seed.
pub const SEED_ENV: &str = "COEVO_SEED";

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub path: Option<PathBuf>,
    /// Binning window in seconds for timestamped edges.
    pub window: Option<f64>,
    pub synthetic: Option<SyntheticSpec>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub directory: Option<PathBuf>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub data: DataSection,
    pub model: TrainConfig,
    pub eval: EvalSettings,
    pub output: OutputSection,
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| CoevoError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CoevoError::io(path, e))?;
        Self::parse(&text).map_err(|e| CoevoError::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| CoevoError::Config(e.to_string()))
    }
}

/// The seed from `COEVO_SEED` if set, otherwise `configured`.
pub fn seed_override(configured: u64) -> Result<u64> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| CoevoError::Config(format!("{SEED_ENV}={v:?} is not an unsigned integer"))),
        Err(_) => Ok(configured),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::FusionVariant;

    #[test]
    fn sections_and_defaults() {
        let cfg = ExperimentConfig::parse(
            "[data]\nwindow = 86400.0\n[data.synthetic]\nn = 12\nt = 4\n[model]\nspan = 2\nfusion = \"avg\"\n[eval]\nks = [5]\n",
        )
        .unwrap();
        assert_eq!(cfg.data.window, Some(86400.0));
        assert_eq!(cfg.data.synthetic.as_ref().unwrap().horizon, 4);
        assert_eq!(cfg.model.span, 2);
        assert_eq!(cfg.model.fusion, FusionVariant::Avg);
        assert_eq!(cfg.model.dim, TrainConfig::default().dim);
        assert_eq!(cfg.eval.ks, vec![5]);
        assert_eq!(ExperimentConfig::parse("").unwrap(), ExperimentConfig::default());
        let again = ExperimentConfig::parse(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(again, cfg);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        for text in ["[model]\nspna = 2", "[modle]\nspan = 2", "[data.synthetic]\nnodes = 3", "[eval]\nk = 1"] {
            assert!(matches!(ExperimentConfig::parse(text), Err(CoevoError::Config(_))), "{text}");
        }
    }
}
