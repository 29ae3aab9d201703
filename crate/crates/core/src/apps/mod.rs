//! Uses of transport plans beyond the loss itself: moving labels and
//! features across graphs, tuning `(alpha, rho)` by gradient descent through
//! the predictor, gradient flow of a graph toward a target, and plan-mass
//! similarity with a classical MDS embedding.

mod flow;
mod labels;
mod similarity;

use thiserror::Error;

pub use flow::{graph_flow, FlowConfig, FlowStep, PlanSource};
pub use labels::{
    propagate_labels, transport_features, tune_and_score, tune_objective, tune_params, LabelPropResult, LabelReport, TuneConfig,
    TuneStep, TunedTransfer, Transported, UNMATCHED_MASS,
};
pub use similarity::{mds_embed, mds_embed_with, Dissimilarity, similarity_matrix, Embedding};

#[derive(Debug, Error)]
pub enum AppError {
    #[error("invalid input: {0}")]
    Input(String),
    #[error(transparent)]
    Model(#[from] crate::model::ModelError),
    #[error(transparent)]
    Fugw(#[from] crate::fugw::FugwError),
    #[error(transparent)]
    Graph(#[from] crate::graph::GraphError),
    #[error(transparent)]
    Solver(#[from] crate::solvers::SolverError),
    #[error(transparent)]
    Tensor(#[from] crate::tensor::TensorError),
}

pub type Result<T> = std::result::Result<T, AppError>;
