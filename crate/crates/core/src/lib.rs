//! Fused unbalanced Gromov-Wasserstein (FUGW) transport between attributed
//! graphs.
//!
//! The crate provides:
//!
//! * [`autodiff`]: a small reverse-mode differentiation tape over dense
//!   [`tensor::Tensor`] matrices.
//! * [`graph`]: attributed graphs, stochastic block model generation and
//!   graph files.
//! * [`fugw`]: the FUGW loss and its pieces.
//! * [`solvers`]: block-coordinate descent with four inner solvers.
//! * [`model`]: the cross-attention transport plan predictor.
//! * [`train`]: amortized training of the predictor.
//! * [`apps`]: label propagation, hyperparameter tuning, graph flow and
//!   plan-mass similarity.

pub mod apps;
pub mod autodiff;
pub mod bench;
pub mod fugw;
pub mod graph;
pub mod model;
pub mod solvers;
pub mod tensor;
pub mod train;
