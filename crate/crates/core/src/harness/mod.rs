//! Experiment orchestration: TOML configs, the command implementations
//! behind the CLI, and versioned CSV reports.
//!
//! Every command writes `<output dir>/<command>.csv`. `train` also writes a
//! checkpoint and a loss trace per seed, which `evaluate` and `divergence`
//! read back.

mod commands;
mod config;
mod table;

pub use commands::{
    build_datasets, checkpoint_path, cmd_asymmetry, cmd_bounds, cmd_divergence, cmd_evaluate, cmd_sweep_p, cmd_train,
    raw_datasets, BoundsSummary,
};
pub use config::{
    AsymmetrySection, BoundsSection, DataSection, DataSource, DivergenceSection, ExperimentConfig, ExperimentSection,
    PSetting, SplitSection, SweepSection, TrainSection,
};
pub use table::{fmt_num, mean_stdev, SeedTable, Table};

use crate::bounds::BoundsError;
use crate::data::DataError;
use crate::network::NetworkError;
use crate::trainer::TrainError;
use thiserror::Error;

/// Process exit status for a run that found bound violations.
pub const EXIT_BOUND_VIOLATION: u8 = 4;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config {path}: {reason}")]
    Config { path: String, reason: String },
    #[error("config: {0}")]
    Parse(String),
    #[error("missing checkpoint {0} (run `train` with the same config first)")]
    MissingCheckpoint(String),
    #[error("report schema: {0}")]
    Schema(String),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Bounds(#[from] BoundsError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl HarnessError {
    /// 2 for configuration problems, 3 for a numerical abort, 1 otherwise.
    pub fn exit_code(&self) -> u8 {
        match self {
            HarnessError::Config { .. } | HarnessError::Parse(_) | HarnessError::Train(TrainError::Config(_)) => 2,
            HarnessError::Train(TrainError::NonFinite { .. }) => 3,
            _ => 1,
        }
    }
}
