pub mod eval;
pub mod export_sim;
pub mod gen_synth;
pub mod gradcheck;
pub mod localize;
pub mod train;

use std::fmt;
use std::path::PathBuf;

use lcc_core::checkpoint::CheckpointError;
use lcc_core::config::ConfigError;
use lcc_core::data::DataError;
use lcc_core::model::ModelError;
use lcc_core::tensor::TensorError;
use lcc_core::train::TrainError;

/// Error with the process exit code it maps to.
#[derive(Debug)]
pub enum CliError {
    /// Bad flags, bad config, or an operation the model cannot do (exit 1).
    Usage(String),
    /// Dataset, checkpoint, or filesystem problems (exit 2).
    Data(String),
    /// Non-finite values or failed gradient checks (exit 3).
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }

    pub fn usage(msg: impl Into<String>) -> Self {
        CliError::Usage(msg.into())
    }

    pub fn data(msg: impl Into<String>) -> Self {
        CliError::Data(msg.into())
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Data(m) | CliError::Numerical(m) => f.write_str(m),
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Usage(e.to_string())
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<CheckpointError> for CliError {
    fn from(e: CheckpointError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<TensorError> for CliError {
    fn from(e: TensorError) -> Self {
        CliError::Numerical(e.to_string())
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Config(_) => CliError::Usage(e.to_string()),
            ModelError::Data(_) | ModelError::Checkpoint(_) => CliError::Data(e.to_string()),
            ModelError::Tensor(_) => CliError::Numerical(e.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::NonFinite { .. } => CliError::Numerical(e.to_string()),
            TrainError::Tensor(_) => CliError::Numerical(e.to_string()),
            TrainError::Model(m) => m.into(),
            TrainError::Invalid(_) => CliError::Data(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

/// Default output directory: flag > config > `LCC_OUT_DIR` > `runs`.
pub fn resolve_out_dir(flag: Option<PathBuf>, config: Option<PathBuf>) -> PathBuf {
    flag.or(config)
        .or_else(|| std::env::var_os("LCC_OUT_DIR").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("runs"))
}
