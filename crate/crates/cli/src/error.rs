use std::path::PathBuf;

use thiserror::Error;
use ulot::apps::AppError;
use ulot::bench::WarmStartError;
use ulot::fugw::FugwError;
use ulot::graph::GraphError;
use ulot::model::ModelError;
use ulot::solvers::SolverError;
use ulot::train::TrainError;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("cannot write {path}: {source}")]
    Write { path: PathBuf, source: std::io::Error },
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("{0}")]
    Input(String),
    /// Outputs were written, but some items failed.
    #[error("{failed} of {total} items failed; see the outputs for details")]
    Partial { failed: usize, total: usize },
    #[error("solver failed: {0}")]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Fugw(#[from] FugwError),
    #[error(transparent)]
    App(#[from] AppError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl From<WarmStartError> for CliError {
    fn from(e: WarmStartError) -> Self {
        match e {
            WarmStartError::Solver(e) => Self::Solver(e),
            WarmStartError::Model(e) => Self::Model(e),
        }
    }
}

fn model_code(e: &ModelError) -> u8 {
    match e {
        ModelError::ConfigMismatch { .. }
        | ModelError::InputDim { .. }
        | ModelError::Format(_)
        | ModelError::Parameter { .. } => 4,
        _ => 1,
    }
}

impl CliError {
    /// 2: an output path could not be written. 3: a solver failed or some
    /// items of a batch command failed. 4: weights do not fit the config or
    /// the data.
    pub fn exit_code(&self) -> u8 {
        match self {
            Self::Write { .. } => 2,
            Self::Partial { .. } | Self::Solver(_) => 3,
            Self::Model(e) => model_code(e),
            Self::Train(TrainError::Model(e)) => model_code(e),
            Self::App(AppError::Model(e)) => model_code(e),
            Self::App(AppError::Solver(_)) => 3,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
