//! JSON run configuration for `tenet train`.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::Deserialize;
use serde_json::Value;
use tenet_core::segmenter::ModelConfig;
use tenet_core::training::TrainConfig;
use tenet_core::{Error, Result};

const MODEL_KEYS: [&str; 6] = ["dims", "patch_size", "bond_dim", "feature_map", "channels", "classes"];
const RUN_KEYS: [&str; 2] = ["split", "data_root"];

#[derive(Debug, Clone, Deserialize)]
pub struct RunConfig {
    #[serde(flatten)]
    pub model: ModelConfig,
    #[serde(flatten)]
    pub train: TrainConfig,
    /// Train/validation/test fractions.
    #[serde(default = "default_split")]
    pub split: [f64; 3],
    #[serde(default)]
    pub data_root: Option<PathBuf>,
}

fn default_split() -> [f64; 3] {
    [0.6, 0.2, 0.2]
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    /// Parses and validates a config document. Unknown keys are rejected so
    /// that a misspelt hyperparameter cannot silently fall back to its default.
    pub fn parse(text: &str) -> Result<Self> {
        let value: Value = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let Value::Object(map) = &value else {
            return Err(Error::Config("config must be a JSON object".into()));
        };
        let known = known_keys();
        if let Some(key) = map.keys().find(|k| !known.contains(k.as_str())) {
            return Err(Error::Config(format!("unknown config key `{key}`")));
        }
        let cfg: RunConfig = serde_json::from_value(value).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()
    }
}

fn known_keys() -> BTreeSet<String> {
    let mut keys: BTreeSet<String> = MODEL_KEYS.iter().chain(&RUN_KEYS).map(|k| k.to_string()).collect();
    if let Ok(Value::Object(train)) = serde_json::to_value(TrainConfig::default()) {
        keys.extend(train.keys().cloned());
    }
    keys
}
