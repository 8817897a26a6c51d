//! Synthetic landmark scenes standing in for imagery.
//!
//! A scene is a cloud of 3D landmarks. A camera pose "observes" the scene by
//! expressing every landmark in camera coordinates, and a frozen random
//! two-layer map turns that observation into the low-dimensional feature
//! vector the discriminator conditions on.

mod dataset;

pub use dataset::{build_dataset, Dataset, DatasetConfig, FrameSample, SequenceInfo, DATASET_MAGIC, DATASET_VERSION};

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::container::ContainerError;
use crate::diff::Tensor;
use crate::quat::{quat_exp, LogQuaternion, Pose, Rotation, Translation};
use crate::seeds;

pub const MIN_LANDMARKS: usize = 8;

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("a scene needs at least {MIN_LANDMARKS} landmarks, got {0}")]
    TooFewLandmarks(usize),
    #[error("shape mismatch: expected length {expected}, got {got}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("invalid dataset configuration: {0}")]
    InvalidConfig(String),
    #[error("train and test splits share {0} ground-truth poses")]
    OverlappingSplits(usize),
    #[error(transparent)]
    Container(#[from] ContainerError),
}

/// Landmarks drawn uniformly inside the box `[-extent, extent]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneModel {
    pub landmarks: Vec<[f64; 3]>,
    pub extent: [f64; 3],
    pub seed: u64,
}

impl SceneModel {
    pub fn observation_dim(&self) -> usize {
        3 * self.landmarks.len()
    }
}

pub fn generate_scene(seed: u64, n_landmarks: usize, extent: [f64; 3]) -> Result<SceneModel, SceneError> {
    if n_landmarks < MIN_LANDMARKS {
        return Err(SceneError::TooFewLandmarks(n_landmarks));
    }
    let mut rng = seeds::rng(seed, 0x5ce0e);
    let landmarks = (0..n_landmarks)
        .map(|_| {
            [
                rng.random_range(-extent[0]..=extent[0]),
                rng.random_range(-extent[1]..=extent[1]),
                rng.random_range(-extent[2]..=extent[2]),
            ]
        })
        .collect();
    Ok(SceneModel {
        landmarks,
        extent,
        seed,
    })
}

/// Shape of the camera random walk.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryParams {
    /// Largest rotation between consecutive frames, degrees.
    pub smoothness_deg: f64,
    /// Largest camera displacement between consecutive frames.
    pub translation_step: f64,
    /// Largest rotation away from the identity, degrees.
    pub max_rotation_deg: f64,
}

impl Default for TrajectoryParams {
    fn default() -> Self {
        TrajectoryParams {
            smoothness_deg: 2.0,
            translation_step: 0.05,
            max_rotation_deg: 40.0,
        }
    }
}

fn random_unit3<R: Rng>(rng: &mut R) -> [f64; 3] {
    loop {
        let v: [f64; 3] = [
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
        ];
        let n = crate::quat::norm3(&v);
        if n > 1e-9 {
            return [v[0] / n, v[1] / n, v[2] / n];
        }
    }
}

fn project_ball(v: [f64; 3], radius: f64) -> [f64; 3] {
    let n = crate::quat::norm3(&v);
    if n <= radius {
        v
    } else {
        let k = radius / n;
        [v[0] * k, v[1] * k, v[2] * k]
    }
}

fn reflect_into(x: f64, bound: f64) -> f64 {
    let mut x = x;
    // Fold back into [-bound, bound]; steps are small so one fold suffices.
    if x > bound {
        x = 2.0 * bound - x;
    }
    if x < -bound {
        x = -2.0 * bound - x;
    }
    x.clamp(-bound, bound)
}

/// Smooth random walk of camera poses with the default walk shape and the
/// given per-frame rotation bound.
pub fn sample_trajectory(scene: &SceneModel, n_frames: usize, seed: u64, smoothness_deg: f64) -> Vec<Pose> {
    let params = TrajectoryParams {
        smoothness_deg,
        ..Default::default()
    };
    sample_trajectory_with(scene, n_frames, seed, &params)
}

/// Random walk in translation (reflected at 1.5× the scene extent) and in
/// log-quaternion space (projected onto a ball of radius half the maximum
/// rotation). Each log-space step is at most half the smoothness bound,
/// which keeps the relative rotation between frames within the bound.
pub fn sample_trajectory_with(scene: &SceneModel, n_frames: usize, seed: u64, params: &TrajectoryParams) -> Vec<Pose> {
    let mut rng = seeds::rng(seed, 0x7a5);
    let bounds = scene.extent.map(|e| 1.5 * e);
    let max_half = 0.5 * params.max_rotation_deg.to_radians();
    let step_half = 0.5 * params.smoothness_deg.max(0.0).to_radians();

    let mut t = bounds.map(|b| rng.random_range(-b..=b));
    let mut v = loop {
        let c = [
            rng.random_range(-max_half..=max_half),
            rng.random_range(-max_half..=max_half),
            rng.random_range(-max_half..=max_half),
        ];
        if crate::quat::norm3(&c) <= max_half {
            break c;
        }
    };

    let mut poses = Vec::with_capacity(n_frames);
    for k in 0..n_frames {
        if k > 0 {
            let dir = random_unit3(&mut rng);
            let mag = rng.random_range(0.0..=1.0) * params.translation_step;
            for i in 0..3 {
                t[i] = reflect_into(t[i] + dir[i] * mag, bounds[i]);
            }
            let axis = random_unit3(&mut rng);
            let ang = rng.random_range(0.0..=1.0) * step_half;
            v = project_ball(
                [v[0] + axis[0] * ang, v[1] + axis[1] * ang, v[2] + axis[2] * ang],
                max_half,
            );
        }
        let q = quat_exp(&LogQuaternion::new(v)).canonical();
        poses.push(Pose::new(Rotation::Quat(q), Translation(t)));
    }
    poses
}

/// Landmarks in camera coordinates, `R(q)⁻¹ (x − t)`, flattened in landmark order.
pub fn observe(scene: &SceneModel, pose: &Pose) -> Vec<f64> {
    let qi = pose.unit_quaternion().conjugate();
    let t = pose.translation.0;
    let mut out = Vec::with_capacity(scene.observation_dim());
    for p in &scene.landmarks {
        let c = qi.rotate([p[0] - t[0], p[1] - t[1], p[2] - t[2]]);
        out.extend_from_slice(&c);
    }
    out
}

/// Frozen feature extractor: a random projection followed by `tanh` and a
/// bias-free linear reduction to `feature_dim`. Weights are fixed at
/// construction and never exposed mutably.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtractorParams {
    seed: u64,
    projection: Tensor,
    reduction: Tensor,
}

impl ExtractorParams {
    pub fn new(seed: u64, observation_dim: usize, hidden_dim: usize, feature_dim: usize) -> Self {
        let mut rng = seeds::rng(seed, 0xfea7);
        let a = (3.0 / observation_dim as f64).sqrt();
        let projection = Tensor::matrix(
            hidden_dim,
            observation_dim,
            (0..hidden_dim * observation_dim)
                .map(|_| rng.random_range(-a..a))
                .collect(),
        )
        .expect("shape");
        let b = (6.0 / (hidden_dim + feature_dim) as f64).sqrt();
        let reduction = Tensor::matrix(
            feature_dim,
            hidden_dim,
            (0..feature_dim * hidden_dim).map(|_| rng.random_range(-b..b)).collect(),
        )
        .expect("shape");
        ExtractorParams {
            seed,
            projection,
            reduction,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn observation_dim(&self) -> usize {
        self.projection.shape()[1]
    }

    pub fn hidden_dim(&self) -> usize {
        self.projection.shape()[0]
    }

    pub fn feature_dim(&self) -> usize {
        self.reduction.shape()[0]
    }

    pub fn projection(&self) -> &Tensor {
        &self.projection
    }

    pub fn reduction(&self) -> &Tensor {
        &self.reduction
    }
}

fn matvec(m: &Tensor, x: &[f64]) -> Vec<f64> {
    let cols = m.shape()[1];
    m.data()
        .chunks_exact(cols)
        .map(|row| row.iter().zip(x).map(|(a, b)| a * b).sum())
        .collect()
}

/// `reduction · tanh(projection · observation)`.
pub fn extract_features(observation: &[f64], extractor: &ExtractorParams) -> Result<Vec<f64>, SceneError> {
    if observation.len() != extractor.observation_dim() {
        return Err(SceneError::ShapeMismatch {
            expected: extractor.observation_dim(),
            got: observation.len(),
        });
    }
    let hidden: Vec<f64> = matvec(&extractor.projection, observation)
        .into_iter()
        .map(f64::tanh)
        .collect();
    Ok(matvec(&extractor.reduction, &hidden))
}

/// Tiles a pose vector end to end and truncates to `feature_dim` entries, so
/// entry `i` is `pose[i mod k]`.
pub fn replicate_pose(pose: &[f64], feature_dim: usize) -> Vec<f64> {
    assert!(
        !pose.is_empty() && pose.len() <= feature_dim,
        "pose longer than feature width"
    );
    pose.iter().copied().cycle().take(feature_dim).collect()
}

/// First copy of a tiled pose vector.
pub fn detile(tiled: &[f64], pose_dim: usize) -> Vec<f64> {
    tiled[..pose_dim].to_vec()
}

/// Adds isotropic Gaussian noise to an observation.
pub(crate) fn perturb<R: Rng>(obs: &mut [f64], sigma: f64, rng: &mut R) {
    if sigma > 0.0 {
        for o in obs {
            let n: f64 = StandardNormal.sample(rng);
            *o += sigma * n;
        }
    }
}

#[cfg(test)]
mod tests;
