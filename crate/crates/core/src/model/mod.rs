//! Learned transport-plan predictor.
//!
//! Each embedding layer runs a self path (two-step GCN) and a cross path
//! (attention over cosine similarities) for both graphs with shared weights,
//! then merges them with the layer input. A sigmoid head turns the final
//! embeddings into node weights `v1`, `v2`, and the plan is assembled from
//! the last layer's attention matrices:
//!
//! ```text
//! P = 1/2 [ diag(v1) S1 / n1 + S2 diag(v2) / n2 ]
//! ```
//!
//! Both the loss parameters are fed to every MLP: `rho` as a raw scalar
//! channel and `alpha` through a Fourier encoding.

mod forward;
mod weights;

use thiserror::Error;

pub use forward::{
    cond_rows, conditioning, cross_attention, encode_alpha, encode_alpha_var, gcn_forward, merge,
    normalized_adjacency, predict_plan, predict_plan_var, CrossOutput, Forward, GraphInput, LayerVars, Linear,
    WeightVars,
};
pub use weights::{load_weights, save_weights, LinearSpec, ModelConfig, ModelWeights, WEIGHTS_FORMAT_VERSION};

use crate::tensor::TensorError;

/// Interval `rho` is clamped to before entering the network.
pub const RHO_RANGE: (f64, f64) = (1e-7, 1.0);

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("alpha must lie in [0, 1], got {0}")]
    Alpha(f64),
    #[error("rho must be positive and finite, got {0}")]
    Rho(f64),
    #[error("feature dimension {found} does not match the model input dimension {expected}")]
    InputDim { expected: usize, found: usize },
    #[error("parameter {name}: {reason}")]
    Parameter { name: String, reason: String },
    #[error("config mismatch on {field}: expected {expected}, found {found}")]
    ConfigMismatch {
        field: &'static str,
        expected: String,
        found: String,
    },
    #[error("non-finite activations after embedding layer {layer}")]
    NonFinite { layer: usize },
    #[error("weights file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

pub type Result<T> = std::result::Result<T, ModelError>;

/// Clamps `rho` into [`RHO_RANGE`].
pub fn clamp_rho(rho: f64) -> f64 {
    rho.clamp(RHO_RANGE.0, RHO_RANGE.1)
}
