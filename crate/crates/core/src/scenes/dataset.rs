use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{
    extract_features, generate_scene, observe, perturb, sample_trajectory_with, ExtractorParams, SceneError,
    SceneModel, TrajectoryParams,
};
use crate::container::{self, ContainerError, Encoder};
use crate::quat::{Pose, Rotation, RotationMode, Translation, UnitQuaternion};
use crate::seeds;

pub const DATASET_MAGIC: &[u8; 8] = b"ADVPDSET";
pub const DATASET_VERSION: u32 = 1;

/// Everything needed to regenerate a dataset bit for bit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub seed: u64,
    pub n_landmarks: usize,
    pub extent: [f64; 3],
    /// Total frames across both splits.
    pub n_frames: usize,
    /// Fraction of `n_frames` held out for testing.
    pub test_fraction: f64,
    pub train_sequences: usize,
    pub test_sequences: usize,
    pub trajectory: TrajectoryParams,
    /// Standard deviation of Gaussian noise added to observations.
    pub obs_noise: f64,
    pub extractor_hidden: usize,
    /// Feature width; the mode default (70 / 60) when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feature_dim: Option<usize>,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            seed: 1,
            n_landmarks: 64,
            extent: [1.0, 1.0, 1.0],
            n_frames: 640,
            test_fraction: 0.2,
            train_sequences: 4,
            test_sequences: 1,
            trajectory: TrajectoryParams::default(),
            obs_noise: 0.0,
            extractor_hidden: 128,
            feature_dim: None,
        }
    }
}

impl DatasetConfig {
    pub fn n_test(&self) -> usize {
        (self.n_frames as f64 * self.test_fraction).round() as usize
    }

    pub fn n_train(&self) -> usize {
        self.n_frames - self.n_test()
    }

    pub fn feature_dim_for(&self, mode: RotationMode) -> usize {
        self.feature_dim.unwrap_or(mode.default_feature_dim())
    }

    pub fn validate(&self) -> Result<(), SceneError> {
        let bad = |m: String| Err(SceneError::InvalidConfig(m));
        if !(0.0..1.0).contains(&self.test_fraction) {
            return bad(format!(
                "scene.test_fraction must be in [0, 1), got {}",
                self.test_fraction
            ));
        }
        if self.n_train() == 0 {
            return bad("scene.n_frames leaves an empty training split".into());
        }
        if self.train_sequences == 0 || self.test_sequences == 0 {
            return bad("scene.train_sequences and scene.test_sequences must be at least 1".into());
        }
        if self.extent.iter().any(|e| !(e.is_finite() && *e > 0.0)) {
            return bad(format!("scene.extent must be positive, got {:?}", self.extent));
        }
        if self.extractor_hidden == 0 {
            return bad("scene.extractor_hidden must be positive".into());
        }
        if self.obs_noise < 0.0 {
            return bad("scene.obs_noise must be non-negative".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameSample {
    /// Ground truth, always stored as a canonical unit quaternion.
    pub pose_gt: Pose,
    pub observation: Vec<f64>,
    pub features: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SequenceInfo {
    pub seed: u64,
    pub n_frames: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct DatasetMeta {
    config: DatasetConfig,
    feature_dim: usize,
    train_sequences: Vec<SequenceInfo>,
    test_sequences: Vec<SequenceInfo>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub config: DatasetConfig,
    pub scene: SceneModel,
    pub extractor: ExtractorParams,
    pub train: Vec<FrameSample>,
    pub test: Vec<FrameSample>,
    pub train_sequences: Vec<SequenceInfo>,
    pub test_sequences: Vec<SequenceInfo>,
}

fn split_counts(total: usize, parts: usize) -> Vec<usize> {
    (0..parts)
        .map(|i| total / parts + usize::from(i < total % parts))
        .collect()
}

/// Generates the scene, the trajectories of both splits and every frame.
/// Train and test frames come from separately seeded trajectories.
pub fn build_dataset(config: &DatasetConfig, mode: RotationMode) -> Result<Dataset, SceneError> {
    config.validate()?;
    let scene = generate_scene(config.seed, config.n_landmarks, config.extent)?;
    let feature_dim = config.feature_dim_for(mode);
    let extractor = ExtractorParams::new(
        seeds::derive_seed(config.seed, 0xe7),
        scene.observation_dim(),
        config.extractor_hidden,
        feature_dim,
    );

    let sequences = |counts: Vec<usize>, stream: u64| -> Vec<SequenceInfo> {
        counts
            .into_iter()
            .enumerate()
            .map(|(i, n_frames)| SequenceInfo {
                seed: seeds::derive_seed(config.seed, stream + i as u64),
                n_frames,
            })
            .collect()
    };
    let train_sequences = sequences(split_counts(config.n_train(), config.train_sequences), 0x1000);
    let test_sequences = sequences(split_counts(config.n_test(), config.test_sequences), 0x2000);

    let frames = |seqs: &[SequenceInfo]| -> Result<Vec<FrameSample>, SceneError> {
        let mut out = Vec::new();
        for seq in seqs {
            let mut noise = seeds::rng(seq.seed, 0x401);
            for pose in sample_trajectory_with(&scene, seq.n_frames, seq.seed, &config.trajectory) {
                let mut observation = observe(&scene, &pose);
                perturb(&mut observation, config.obs_noise, &mut noise);
                let features = extract_features(&observation, &extractor)?;
                out.push(FrameSample {
                    pose_gt: pose,
                    observation,
                    features,
                });
            }
        }
        Ok(out)
    };
    let train = frames(&train_sequences)?;
    let test = frames(&test_sequences)?;

    let dataset = Dataset {
        config: config.clone(),
        scene,
        extractor,
        train,
        test,
        train_sequences,
        test_sequences,
    };
    dataset.validate_disjoint()?;
    Ok(dataset)
}

fn pose_key(p: &Pose) -> Vec<u64> {
    p.to_vector().iter().map(|v| v.to_bits()).collect()
}

impl Dataset {
    pub fn feature_dim(&self) -> usize {
        self.extractor.feature_dim()
    }

    pub fn observation_dim(&self) -> usize {
        self.scene.observation_dim()
    }

    /// Fails if any ground-truth pose appears in both splits.
    pub fn validate_disjoint(&self) -> Result<(), SceneError> {
        let train: HashSet<Vec<u64>> = self.train.iter().map(|s| pose_key(&s.pose_gt)).collect();
        let shared = self
            .test
            .iter()
            .filter(|s| train.contains(&pose_key(&s.pose_gt)))
            .count();
        if shared > 0 {
            return Err(SceneError::OverlappingSplits(shared));
        }
        Ok(())
    }

    /// SHA-256 of the serialized dataset, hex encoded.
    pub fn checksum_hex(&self) -> String {
        let bytes = self.to_bytes();
        bytes[bytes.len() - 32..].iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        self.encode(DATASET_VERSION)
    }

    pub(crate) fn encode(&self, version: u32) -> Vec<u8> {
        let meta = DatasetMeta {
            config: self.config.clone(),
            feature_dim: self.feature_dim(),
            train_sequences: self.train_sequences.clone(),
            test_sequences: self.test_sequences.clone(),
        };
        let mut enc = Encoder::new(DATASET_MAGIC, version);
        enc.str(&serde_json::to_string(&meta).expect("dataset metadata serializes"));
        enc.u64(self.scene.seed);
        enc.f64s(&self.scene.extent);
        enc.u32(self.scene.landmarks.len() as u32);
        for l in &self.scene.landmarks {
            enc.f64s(l);
        }
        enc.u64(self.extractor.seed());
        enc.u32(self.extractor.observation_dim() as u32);
        enc.u32(self.extractor.hidden_dim() as u32);
        enc.u32(self.extractor.feature_dim() as u32);
        for split in [&self.train, &self.test] {
            enc.u32(split.len() as u32);
            for s in split {
                let q = s.pose_gt.unit_quaternion().to_array();
                enc.f64s(&q);
                enc.f64s(&s.pose_gt.translation.0);
                enc.f64s(&s.observation);
                enc.f64s(&s.features);
            }
        }
        enc.finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, SceneError> {
        let mut dec = container::open(bytes, DATASET_MAGIC, DATASET_VERSION, "dataset")?;
        let meta: DatasetMeta =
            serde_json::from_str(&dec.str()?).map_err(|e| dec.malformed(format!("metadata: {e}")))?;
        let scene_seed = dec.u64()?;
        let extent = dec.f64s(3)?;
        let n_landmarks = dec.u32()? as usize;
        let flat = dec.f64s(3 * n_landmarks)?;
        let landmarks = flat.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
        let scene = SceneModel {
            landmarks,
            extent: [extent[0], extent[1], extent[2]],
            seed: scene_seed,
        };
        let ex_seed = dec.u64()?;
        let obs_dim = dec.u32()? as usize;
        let hidden = dec.u32()? as usize;
        let d_f = dec.u32()? as usize;
        let extractor = ExtractorParams::new(ex_seed, obs_dim, hidden, d_f);

        let mut splits = Vec::with_capacity(2);
        for _ in 0..2 {
            let n = dec.u32()? as usize;
            let mut split = Vec::with_capacity(n);
            for _ in 0..n {
                let q = dec.f64s(4)?;
                let t = dec.f64s(3)?;
                let observation = dec.f64s(obs_dim)?;
                let features = dec.f64s(d_f)?;
                let q = UnitQuaternion::from_stored([q[0], q[1], q[2], q[3]]);
                if (q.norm() - 1.0).abs() > 1e-9 {
                    return Err(dec.malformed(format!("stored quaternion has norm {}", q.norm())).into());
                }
                split.push(FrameSample {
                    pose_gt: Pose::new(Rotation::Quat(q), Translation([t[0], t[1], t[2]])),
                    observation,
                    features,
                });
            }
            splits.push(split);
        }
        dec.finish()?;
        let test = splits.pop().expect("two splits");
        let train = splits.pop().expect("two splits");
        Ok(Dataset {
            config: meta.config,
            scene,
            extractor,
            train,
            test,
            train_sequences: meta.train_sequences,
            test_sequences: meta.test_sequences,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), SceneError> {
        std::fs::write(path, self.to_bytes()).map_err(ContainerError::from)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, SceneError> {
        let bytes = std::fs::read(path).map_err(ContainerError::from)?;
        Self::from_bytes(&bytes)
    }
}
