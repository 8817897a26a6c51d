//! Command-line experiment runner: dataset generation, training, evaluation,
//! refinement sweeps, timing benchmarks and the feature-width ablation.

mod cli;
mod commands;
mod config;
mod output;
mod report;

pub use cli::{run, Cli, Command};
pub use commands::{
    ablate, bench, eval, generate, load_checkpoint, load_dataset, sweep, train_run, AblateArm, AblateReport, AblateRun,
    BenchReport, BenchRow, EvalReport, SweepCell, SweepResult, TrainOptions,
};
pub use config::{AblateConfig, BenchConfig, ExperimentConfig, SweepConfig};
pub use output::{histogram, Histogram, RunDir};
pub use report::{fit_line, LineFit};

use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::advpose::AdvPoseError;
use crate::container::ContainerError;
use crate::quat::RotationMode;
use crate::scenes::SceneError;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("parameterization mismatch: checkpoint uses {found}, requested {expected}")]
    ModeMismatch {
        expected: RotationMode,
        found: RotationMode,
    },
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{}: {source}", path.display())]
    File { path: PathBuf, source: ContainerError },
    #[error("writing {what}: {detail}")]
    Write { what: String, detail: String },
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error(transparent)]
    AdvPose(#[from] AdvPoseError),
}

impl HarnessError {
    pub fn config(field: &str, message: impl std::fmt::Display) -> Self {
        HarnessError::InvalidConfig(format!("{field}: {message}"))
    }

    pub fn io(path: &Path, source: std::io::Error) -> Self {
        HarnessError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub(crate) fn file(path: &Path, source: ContainerError) -> Self {
        match source {
            ContainerError::Io(e) => HarnessError::io(path, e),
            other => HarnessError::File {
                path: path.to_path_buf(),
                source: other,
            },
        }
    }

    /// Process exit code: 2 invalid configuration, 3 I/O failure, 4
    /// numerical abort, 1 anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::InvalidConfig(_) | HarnessError::ModeMismatch { .. } => 2,
            HarnessError::Io { .. } | HarnessError::File { .. } | HarnessError::Write { .. } => 3,
            HarnessError::Scene(e) => match e {
                SceneError::Container(_) => 3,
                _ => 2,
            },
            HarnessError::AdvPose(e) => match e {
                AdvPoseError::NonFiniteLoss { .. } => 4,
                AdvPoseError::InvalidConfig(_)
                | AdvPoseError::ModeMismatch { .. }
                | AdvPoseError::ShapeMismatch { .. }
                | AdvPoseError::EmptyDataset => 2,
                AdvPoseError::Container(_) => 3,
                _ => 1,
            },
        }
    }
}
