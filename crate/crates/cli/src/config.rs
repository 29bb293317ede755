//! Run configuration: a strict, closed TOML schema.
//!
//! Unknown keys are rejected so a typo in a lambda cannot silently corrupt an
//! ablation. An empty file yields the full default configuration.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use dbea_core::losses::LossWeights;
use dbea_core::model::{ModelConfig, ModelMode};
use dbea_core::monitor::MonitorConfig;
use dbea_core::optim::AdamWConfig;
use dbea_core::world::DatasetConfig;

use crate::error::{CliError, Result};

/// Model section; feature dimension, class count, and query count are owned
/// by the dataset section so the two can never drift apart.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub trunk_hidden: usize,
    pub head_hidden: usize,
    pub top_k: usize,
    pub mode: ModelMode,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            trunk_hidden: 64,
            head_hidden: 32,
            top_k: 10,
            mode: ModelMode::Dbea,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: usize,
    pub batch_size: usize,
    /// Tandem and diversity weights ramp linearly from zero over this many
    /// epochs so detection forms before the ensemble terms bite.
    pub lambda_warmup_epochs: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 8,
            lambda_warmup_epochs: 10,
        }
    }
}

/// Full run configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub dataset: DatasetConfig,
    pub model: ModelSection,
    pub train: TrainSection,
    pub loss: LossWeights,
    pub optim: AdamWConfig,
    pub monitor: MonitorConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out_dir: PathBuf::from("runs/default"),
            dataset: DatasetConfig::default(),
            model: ModelSection::default(),
            train: TrainSection::default(),
            loss: LossWeights::default(),
            optim: AdamWConfig::default(),
            monitor: MonitorConfig::default(),
        }
    }
}

impl RunConfig {
    /// The default tandem configuration: halved trunk width with duplicated
    /// heads.
    pub fn default_dbea() -> Self {
        Self::default()
    }

    /// The vanilla baseline: single head over the full-width trunk.
    pub fn default_vanilla() -> Self {
        let mut cfg = Self::default_dbea();
        cfg.model.mode = ModelMode::Vanilla;
        cfg.model.trunk_hidden = 128;
        cfg.out_dir = PathBuf::from("runs/vanilla");
        cfg
    }

    /// Assembles the core model configuration from both sections.
    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            feature_dim: self.dataset.feature_dim,
            trunk_hidden: self.model.trunk_hidden,
            head_hidden: self.model.head_hidden,
            num_classes: self.dataset.num_classes,
            queries: self.dataset.queries,
            top_k: self.model.top_k,
            mode: self.model.mode,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.dataset.validate().map_err(CliError::from)?;
        self.model_config().validate().map_err(CliError::from)?;
        self.loss.validate().map_err(CliError::from)?;
        if !(self.optim.learning_rate > 0.0) {
            return Err(CliError::Config("optim.learning_rate must be > 0".into()));
        }
        if !(self.optim.weight_decay >= 0.0) {
            return Err(CliError::Config("optim.weight_decay must be >= 0".into()));
        }
        if !(0.0 < self.optim.beta1 && self.optim.beta1 < 1.0)
            || !(0.0 < self.optim.beta2 && self.optim.beta2 < 1.0)
        {
            return Err(CliError::Config("optim.beta1/beta2 must be in (0, 1)".into()));
        }
        if self.train.batch_size == 0 {
            return Err(CliError::Config("train.batch_size must be >= 1".into()));
        }
        if self.out_dir.as_os_str().is_empty() {
            return Err(CliError::Config("out_dir must not be empty".into()));
        }
        Ok(())
    }

    /// Canonical TOML rendering used for config hashing and run manifests.
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| CliError::Config(format!("serialize config: {e}")))
    }
}

/// Loads and validates a configuration file. An empty file produces the
/// defaults; unknown keys and constraint violations name the offending key.
pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    parse_config(&text)
}

pub fn parse_config(text: &str) -> Result<RunConfig> {
    let mut cfg: RunConfig =
        toml::from_str(text).map_err(|e| CliError::Config(format!("config parse: {e}")))?;
    if cfg.out_dir.as_os_str().is_empty() {
        cfg.out_dir = PathBuf::from("runs/default");
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Worker count: `DBEA_THREADS` override, else 1 (serial, bit-reproducible).
pub fn thread_count() -> usize {
    std::env::var("DBEA_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n >= 1)
        .unwrap_or(1)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_default_config() {
        let cfg = parse_config("").unwrap();
        assert_eq!(cfg.loss.lambda_div, 40.0);
        assert_eq!(cfg.loss.lambda_ta, 1.0);
        assert_eq!(cfg.loss.lambda_tq, 10.0);
        assert_eq!(cfg.optim.learning_rate, 0.0002);
        assert_eq!(cfg.optim.weight_decay, 0.0001);
        assert_eq!(cfg.train.epochs, 50);
    }

    #[test]
    fn unknown_key_rejected_by_name() {
        let err = parse_config("[loss]\nlambda_divv = 3.0\n").unwrap_err();
        assert!(err.to_string().contains("lambda_divv"), "{err}");
    }

    #[test]
    fn negative_lambda_rejected() {
        let err = parse_config("[loss]\nlambda_tq = -1.0\n").unwrap_err();
        assert!(err.to_string().contains("lambda_tq"), "{err}");
    }

    #[test]
    fn vanilla_defaults_double_trunk() {
        let v = RunConfig::default_vanilla();
        assert_eq!(v.model.trunk_hidden, 128);
        assert_eq!(v.model.mode, ModelMode::Vanilla);
        let d = RunConfig::default_dbea();
        assert_eq!(d.model.trunk_hidden, 64);
    }

    #[test]
    fn toml_roundtrip() {
        let cfg = RunConfig::default_dbea();
        let text = cfg.to_toml().unwrap();
        let back = parse_config(&text).unwrap();
        assert_eq!(back, cfg);
    }
}
