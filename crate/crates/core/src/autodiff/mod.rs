//! Minimal reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! The [`Graph`] is a tape: every operation evaluates eagerly, records its
//! parents and whatever it needs for the backward pass, and returns a [`Var`].
//! [`Graph::backward`] walks the tape in reverse from a scalar node. Only the
//! layer set needed by the residual classifier and the gradient attributors is
//! provided.

mod adam;
pub mod checkpoint;
mod graph;
mod kernels;
mod tensor;

use thiserror::Error;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use checkpoint::{Checkpoint, NamedTensor};
pub use graph::{BatchStats, Gradients, Graph, Padding, Var};
pub use tensor::Tensor;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AutodiffError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("backward requires a scalar output, got shape {0:?}")]
    NotScalar(Vec<usize>),
    #[error("non-finite value produced by {0}")]
    NonFinite(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

pub type Result<T, E = AutodiffError> = std::result::Result<T, E>;
