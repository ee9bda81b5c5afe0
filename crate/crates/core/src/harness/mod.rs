//! Experiment harness: configuration, the training loop, logs and reports.

pub mod config;
pub mod experiment;
pub mod metrics;
pub mod report;

use std::path::{Path, PathBuf};

use thiserror::Error;

pub use config::{CatalogSpec, ExperimentConfig, Mode, Precision};
pub use experiment::{evaluate, train_replicas, EvalOutcome, Experiment, RunSummary, Stage};
pub use metrics::{EventKind, EventRecord, MetricsRecord, Phase};
pub use report::{load_report, RunReport};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config: {0}")]
    Config(String),
    #[error("parse: {0}")]
    Parse(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("no run found: {0} is missing")]
    MissingRun(PathBuf),
    #[error(transparent)]
    Catalog(#[from] crate::shapes::CatalogError),
    #[error(transparent)]
    Checkpoint(#[from] crate::nn::CheckpointError),
    #[error(transparent)]
    Agent(#[from] crate::agent::AgentError),
    #[error(transparent)]
    Env(#[from] crate::grid::EnvError),
}

impl HarnessError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        HarnessError::Io { path: path.to_path_buf(), source }
    }

    pub fn csv(path: &Path, err: csv::Error) -> Self {
        match err.into_kind() {
            csv::ErrorKind::Io(source) => HarnessError::io(path, source),
            other => HarnessError::Parse(format!("{}: {other:?}", path.display())),
        }
    }

    /// Process exit code: 1 for configuration and parse problems, 2 for I/O.
    pub fn exit_code(&self) -> i32 {
        use crate::nn::CheckpointError as C;
        use crate::shapes::CatalogError as S;
        match self {
            HarnessError::Io { .. } | HarnessError::MissingRun(_) => 2,
            HarnessError::Checkpoint(C::Io { .. }) => 2,
            HarnessError::Catalog(S::Io { .. }) => 2,
            _ => 1,
        }
    }
}
