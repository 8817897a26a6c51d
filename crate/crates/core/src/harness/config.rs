use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::advpose::{RefineConfig, TrainConfig};
use crate::quat::RotationMode;
use crate::scenes::DatasetConfig;

/// Grid evaluated by `sweep`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub step_sizes: Vec<f64>,
    pub iterations: Vec<usize>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            step_sizes: vec![1e-4, 3e-4, 1e-3, 3e-3, 1e-2],
            iterations: vec![5, 10, 20, 30, 50],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchConfig {
    /// Iteration counts timed; refinement runs exactly this many steps.
    pub iterations: Vec<usize>,
    /// Test frames timed per iteration count.
    pub frames: usize,
    /// Passes over the frames per iteration count; the fastest pass is kept.
    pub repeats: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            iterations: vec![0, 10, 20, 40, 80],
            frames: 64,
            repeats: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblateConfig {
    /// Feature widths tried; a pose-only arm is always added.
    pub feature_dims: Vec<usize>,
}

impl Default for AblateConfig {
    fn default() -> Self {
        AblateConfig {
            feature_dims: vec![10, 20, 40, 70],
        }
    }
}

/// One file describing an experiment. `seeds` drives the multi-seed
/// commands; seed `s` sets both `scene.seed` and `train.seed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub out_dir: PathBuf,
    pub seeds: Vec<u64>,
    /// Bin count of the emitted error histograms.
    pub histogram_bins: usize,
    pub scene: DatasetConfig,
    pub train: TrainConfig,
    pub refine: RefineConfig,
    #[serde(default)]
    pub sweep: SweepConfig,
    #[serde(default)]
    pub bench: BenchConfig,
    #[serde(default)]
    pub ablate: AblateConfig,
}

impl ExperimentConfig {
    /// Small defaults suited to a laptop.
    pub fn toy(mode: RotationMode) -> Self {
        ExperimentConfig {
            out_dir: PathBuf::from("runs"),
            seeds: (0..10).collect(),
            histogram_bins: 20,
            scene: DatasetConfig::default(),
            train: TrainConfig::new(mode, 100),
            refine: RefineConfig::default(),
            sweep: SweepConfig::default(),
            bench: BenchConfig::default(),
            ablate: AblateConfig::default(),
        }
    }

    pub fn mode(&self) -> RotationMode {
        self.train.mode
    }

    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        let de = toml::Deserializer::parse(text).map_err(|e| HarnessError::config("<root>", e.message()))?;
        let cfg: ExperimentConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let message = e.into_inner().message().to_string();
            HarnessError::config(&field_path(&path, &message), &message)
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("experiment config serializes")
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        Self::from_toml(&text)
    }

    /// Applies `seed` to the scene and the training run.
    pub fn with_seed(&self, seed: u64) -> Self {
        let mut c = self.clone();
        c.scene.seed = seed;
        c.train.seed = seed;
        c
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        self.scene.validate()?;
        self.train.validate()?;
        self.refine.validate()?;
        if self.seeds.is_empty() {
            return Err(HarnessError::config("seeds", "at least one seed is required"));
        }
        if self.histogram_bins == 0 {
            return Err(HarnessError::config("histogram_bins", "must be at least 1"));
        }
        if self.sweep.step_sizes.is_empty() || self.sweep.iterations.is_empty() {
            return Err(HarnessError::config(
                "sweep",
                "step_sizes and iterations must be non-empty",
            ));
        }
        if self.sweep.step_sizes.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
            return Err(HarnessError::config("sweep.step_sizes", "step sizes must be positive"));
        }
        if self.bench.iterations.is_empty() || self.bench.frames == 0 || self.bench.repeats == 0 {
            return Err(HarnessError::config(
                "bench",
                "iterations, frames and repeats must be non-empty",
            ));
        }
        if self.ablate.feature_dims.is_empty() || self.ablate.feature_dims.contains(&0) {
            return Err(HarnessError::config(
                "ablate.feature_dims",
                "must be a non-empty list of positive widths",
            ));
        }
        let pose_dim = self.mode().pose_dim();
        if self.train.use_features && self.scene.feature_dim_for(self.mode()) < pose_dim {
            return Err(HarnessError::config(
                "scene.feature_dim",
                format!("must be at least the pose width {pose_dim}"),
            ));
        }
        if self.ablate.feature_dims.iter().any(|&d| d < pose_dim) {
            return Err(HarnessError::config(
                "ablate.feature_dims",
                format!("widths must be at least the pose width {pose_dim}"),
            ));
        }
        Ok(())
    }
}

/// Dotted path of the offending key; a missing field is appended to the path
/// of the table that lacks it.
pub(crate) fn field_path(path: &str, message: &str) -> String {
    let missing = message
        .strip_prefix("missing field `")
        .and_then(|rest| rest.split('`').next());
    match (path, missing) {
        (".", Some(f)) => f.to_string(),
        (".", None) => "<root>".to_string(),
        (p, Some(f)) => format!("{p}.{f}"),
        (p, None) => p.to_string(),
    }
}
