use std::fmt;
use std::path::{Path, PathBuf};

use rpnformer::model::ModelConfig;
use rpnformer::train::TrainConfig;
use serde::de::DeserializeOwned;
use serde::Deserialize;

/// A config file that could not be read or does not fit its schema.
#[derive(Debug)]
pub struct ConfigError {
    pub path: PathBuf,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path.display(), self.message)
    }
}

impl std::error::Error for ConfigError {}

/// Reads TOML (`.toml`) or JSON (anything else) into `T`.
pub fn load<T: DeserializeOwned>(path: &Path) -> Result<T, ConfigError> {
    let err = |message: String| ConfigError {
        path: path.to_path_buf(),
        message,
    };
    let text = std::fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
    if path.extension().is_some_and(|e| e == "toml") {
        toml::from_str(&text).map_err(|e| err(e.to_string()))
    } else {
        serde_json::from_str(&text).map_err(|e| err(e.to_string()))
    }
}

/// Model architecture given by name or spelled out.
#[derive(Clone, Debug, Deserialize)]
#[serde(untagged)]
pub enum ModelSpec {
    Preset(String),
    Config(Box<ModelConfig>),
}

impl ModelSpec {
    pub fn resolve(&self) -> rpnformer::Result<ModelConfig> {
        let config = match self {
            ModelSpec::Preset(name) => ModelConfig::preset(name)?,
            ModelSpec::Config(c) => (**c).clone(),
        };
        config.validate()?;
        Ok(config)
    }
}

/// Input of the `train` subcommand.
///
/// ```toml
/// data = "data/desk"
/// out = "runs/v1"
/// model = "v1"
///
/// [train]
/// batch_size = 64
/// patience = 5
/// ```
#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainRun {
    /// Dataset directory written by `gen-data`.
    pub data: PathBuf,
    /// Receives `best.ckpt`, `last.ckpt` and `log.jsonl`.
    pub out: PathBuf,
    pub model: ModelSpec,
    /// Source checkpoint for the frozen and fine-tune modes.
    #[serde(default)]
    pub init: Option<PathBuf>,
    #[serde(default)]
    pub train: TrainConfig,
}
