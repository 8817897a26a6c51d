//! Pose regressor, pose discriminator, their losses, adversarial training and
//! discriminator-driven pose refinement.

mod eval;
mod losses;
mod nets;
mod refine;
mod train;

pub use eval::{
    discriminator_accuracy, evaluate, evaluate_frame, mean, median, relative_improvement, DiscAccuracy, FrameResult,
    Metrics,
};
pub use losses::{
    aligned_rotation, disc_forward, disc_forward_vector, disc_loss, disc_loss_graph, disc_loss_with_grads, gen_loss,
    gen_loss_graph, gen_loss_with_grads, pose_from_out, pose_loss, pose_loss_graph, pose_var, pose_vector, refine_loss,
    regress_pose, DiscTerms, GenTerms,
};
pub use nets::{Bound, Discriminator, RegOut, Regressor, ALPHA, BETA, DISC_HIDDEN};
pub use refine::{refine_pose, RefineConfig, RefineStep, RefinementTrace, StopReason};
pub use train::{train, EpochLog, TrainConfig, TrainedModel};

use thiserror::Error;

use crate::container::ContainerError;
use crate::diff::DiffError;
use crate::quat::{QuatError, RotationMode};

#[derive(Debug, Error)]
pub enum AdvPoseError {
    #[error("the training split is empty")]
    EmptyDataset,
    #[error("non-finite loss in epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error("shape mismatch: expected length {expected}, got {got}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("parameterization mismatch: expected {expected}, found {found}")]
    ModeMismatch {
        expected: RotationMode,
        found: RotationMode,
    },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid network parameters: {0}")]
    InvalidParams(String),
    #[error(transparent)]
    Quat(#[from] QuatError),
    #[error(transparent)]
    Diff(#[from] DiffError),
    #[error(transparent)]
    Container(#[from] ContainerError),
}
