//! Dense reverse-mode differentiation.
//!
//! A [`Tape`] records the handful of primitives the pose networks and losses
//! need (affine maps, ELU, sigmoid, clamped binary cross-entropy, ℓ1 distance,
//! concatenation, tiling, normalization and a few scalar helpers). A single
//! reverse sweep yields gradients for parameters and for any input leaf marked
//! differentiable, which is how pose gradients are read out at refinement time.

mod adam;
pub mod checkpoint;
mod params;
mod tape;
mod tensor;

pub use adam::{AdamConfig, OptimizerState};
pub use checkpoint::{Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use params::ParamStore;
pub use tape::{bce, sigmoid, Gradients, Tape, Var, BCE_CLAMP};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DiffError {
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },
    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },
    #[error("backward already ran on this tape")]
    DoubleBackward,
    #[error("loss is not a differentiable value recorded on this tape")]
    DetachedLoss,
    #[error("expected a scalar, got shape {shape:?}")]
    NotScalar { shape: Vec<usize> },
    #[error("variable was recorded on a different tape")]
    ForeignVar,
}

#[cfg(test)]
mod tests;
