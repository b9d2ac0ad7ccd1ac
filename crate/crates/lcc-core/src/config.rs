//! Run configuration: a TOML file with documented defaults that round-trips
//! losslessly. Command-line flags override config fields, which override the
//! defaults.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::StreamKind;
use crate::model::ModelConfig;
use crate::train::TrainConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("failed to parse {path}:\n{detail}")]
    Parse { path: PathBuf, detail: String },
}

/// Everything one experiment needs. Field defaults are the library defaults;
/// a missing section or field in the TOML file falls back to them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Master seed: model init, shuffling, augmentation, drop masks.
    pub seed: u64,
    pub dataset: Option<PathBuf>,
    /// Word-vector file; required for embedding-head training.
    pub words: Option<PathBuf>,
    /// Optional skeleton-connectivity override file.
    pub graph_config: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    /// Streams to train; one checkpoint per entry.
    pub streams: Vec<StreamKind>,
    pub model: ModelConfig,
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            dataset: None,
            words: None,
            graph_config: None,
            out_dir: None,
            streams: vec![StreamKind::Joint],
            model: ModelConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let body = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        toml::from_str(&body).map_err(|e| ConfigError::Parse {
            path: path.to_path_buf(),
            detail: e.to_string(),
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("run config serializes")
    }

    pub fn save(&self, path: &Path) -> Result<(), ConfigError> {
        std::fs::write(path, self.to_toml()).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })
    }
}
