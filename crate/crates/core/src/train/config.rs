use std::path::Path;

use serde::{Deserialize, Serialize};

use super::TrainConfig;
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::resample::ResampleConfig;

/// Flat key/value run description covering training, model and resampling
/// settings. Unset keys take their defaults; unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct RunConfig {
    #[serde(flatten)]
    pub train: TrainConfig,
    #[serde(flatten)]
    pub model: ModelConfig,
    #[serde(flatten)]
    pub resample: ResampleConfig,
}

impl RunConfig {
    /// Compact model widths with the given step budget. The narrower network
    /// trains with a larger step size than the full-width default.
    pub fn desk(max_steps: u64) -> Self {
        Self {
            train: TrainConfig {
                max_steps,
                lr: 1e-3,
                ..TrainConfig::default()
            },
            model: ModelConfig::desk(),
            resample: ResampleConfig::default(),
        }
    }

    pub fn known_keys() -> Vec<String> {
        match toml::Value::try_from(Self::default()) {
            Ok(toml::Value::Table(t)) => t.keys().cloned().collect(),
            _ => Vec::new(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let table: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        let known = Self::known_keys();
        let unknown: Vec<&String> = table.keys().filter(|k| !known.contains(k)).collect();
        if !unknown.is_empty() {
            return Err(Error::Config(format!("unknown config keys: {unknown:?}")));
        }
        let cfg: Self = table.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.resample.validate()?;
        self.model.validate(&self.resample)
    }
}
