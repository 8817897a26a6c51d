use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::losses::{disc_loss_graph, gen_loss_graph, pose_vector};
use super::nets::{Discriminator, Regressor, DISC_HIDDEN};
use super::AdvPoseError;
use crate::diff::{AdamConfig, Checkpoint, DiffError, OptimizerState, ParamStore, Tape, Tensor};
use crate::quat::{QuatError, RotationMode};
use crate::scenes::{Dataset, FrameSample};
use crate::seeds;

const STREAM_REGRESSOR: u64 = 0x4e67;
const STREAM_DISCRIMINATOR: u64 = 0xd15c;
const STREAM_SHUFFLE: u64 = 0x5_0000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub mode: RotationMode,
    /// Weight of the adversarial term in the generator loss.
    pub lambda: f64,
    pub lr: f64,
    pub batch_size: usize,
    pub total_epochs: usize,
    /// Leading epochs trained on the pose loss alone.
    pub warmup_epochs: usize,
    pub beta0: f64,
    pub alpha0: f64,
    pub seed: u64,
    /// Hidden widths of the regressor trunk.
    pub trunk: Vec<usize>,
    /// Hidden widths of the discriminator, before the single output unit.
    pub disc_hidden: Vec<usize>,
    /// Regressor and discriminator steps per mini-batch in the adversarial phase.
    pub regressor_steps: usize,
    pub discriminator_steps: usize,
    /// Condition the discriminator on features; off gives a pose-only discriminator.
    pub use_features: bool,
}

impl TrainConfig {
    /// Defaults for `mode` with `total_epochs` epochs and a 10% warmup.
    pub fn new(mode: RotationMode, total_epochs: usize) -> Self {
        TrainConfig {
            mode,
            lambda: 1e-3,
            lr: 1e-4,
            batch_size: 64,
            total_epochs,
            warmup_epochs: total_epochs / 10,
            beta0: 0.0,
            alpha0: -3.0,
            seed: 1,
            trunk: vec![128, 64],
            disc_hidden: DISC_HIDDEN.to_vec(),
            regressor_steps: 1,
            discriminator_steps: 1,
            use_features: true,
        }
    }

    pub fn validate(&self) -> Result<(), AdvPoseError> {
        let bad = |m: String| Err(AdvPoseError::InvalidConfig(m));
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad(format!("train.lambda must be non-negative, got {}", self.lambda));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("train.lr must be positive, got {}", self.lr));
        }
        if self.batch_size == 0 {
            return bad("train.batch_size must be at least 1".into());
        }
        if self.total_epochs == 0 {
            return bad("train.total_epochs must be at least 1".into());
        }
        if self.warmup_epochs > self.total_epochs {
            return bad(format!(
                "train.warmup_epochs ({}) exceeds train.total_epochs ({})",
                self.warmup_epochs, self.total_epochs
            ));
        }
        if !(self.beta0.is_finite() && self.alpha0.is_finite()) {
            return bad("train.beta0 and train.alpha0 must be finite".into());
        }
        if self.regressor_steps == 0 || self.discriminator_steps == 0 {
            return bad("train.regressor_steps and train.discriminator_steps must be at least 1".into());
        }
        if self.trunk.contains(&0) || self.disc_hidden.contains(&0) {
            return bad("layer widths must be positive".into());
        }
        Ok(())
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig::with_lr(self.lr)
    }
}

/// Per-epoch training record. Adversarial quantities are absent during warmup.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub adversarial: bool,
    pub pose_loss: f64,
    pub adv_loss: Option<f64>,
    pub disc_loss: Option<f64>,
    pub disc_acc_real: Option<f64>,
    pub disc_acc_fake: Option<f64>,
    pub beta: f64,
    pub alpha: f64,
}

/// Networks, optimizer states and history of a (possibly unfinished) run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub config: TrainConfig,
    pub regressor: Regressor,
    pub discriminator: Discriminator,
    pub regressor_opt: OptimizerState,
    pub discriminator_opt: OptimizerState,
    pub epochs_done: usize,
    pub log: Vec<EpochLog>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointMeta {
    config: TrainConfig,
    feature_dim: usize,
    epochs_done: usize,
    regressor_opt_step: u64,
    discriminator_opt_step: u64,
    log: Vec<EpochLog>,
}

fn split_prefixed(tensors: &BTreeMap<String, Tensor>, prefix: &str) -> BTreeMap<String, Tensor> {
    tensors
        .iter()
        .filter_map(|(k, v)| k.strip_prefix(prefix).map(|n| (n.to_string(), v.clone())))
        .collect()
}

impl TrainedModel {
    /// Fresh networks for `config` sized to `dataset`.
    pub fn init(dataset: &Dataset, config: &TrainConfig) -> Result<Self, AdvPoseError> {
        config.validate()?;
        if config.use_features && dataset.feature_dim() < config.mode.pose_dim() {
            return Err(AdvPoseError::InvalidConfig(format!(
                "feature width {} is smaller than the pose vector ({})",
                dataset.feature_dim(),
                config.mode.pose_dim()
            )));
        }
        let regressor = Regressor::new(
            config.mode,
            dataset.observation_dim(),
            &config.trunk,
            config.beta0,
            config.alpha0,
            &mut seeds::rng(config.seed, STREAM_REGRESSOR),
        );
        let discriminator = Discriminator::new(
            config.mode,
            dataset.feature_dim(),
            &config.disc_hidden,
            config.use_features,
            &mut seeds::rng(config.seed, STREAM_DISCRIMINATOR),
        );
        Ok(TrainedModel {
            config: config.clone(),
            regressor,
            discriminator,
            regressor_opt: OptimizerState::new(config.adam()),
            discriminator_opt: OptimizerState::new(config.adam()),
            epochs_done: 0,
            log: Vec::new(),
        })
    }

    pub fn mode(&self) -> RotationMode {
        self.config.mode
    }

    pub fn is_finished(&self) -> bool {
        self.epochs_done >= self.config.total_epochs
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let meta = CheckpointMeta {
            config: self.config.clone(),
            feature_dim: self.discriminator.feature_dim(),
            epochs_done: self.epochs_done,
            regressor_opt_step: self.regressor_opt.step,
            discriminator_opt_step: self.discriminator_opt.step,
            log: self.log.clone(),
        };
        let mut tensors = BTreeMap::new();
        for (k, v) in self.regressor.params().iter().chain(self.discriminator.params().iter()) {
            tensors.insert(k.clone(), v.clone());
        }
        for (tag, opt) in [("reg", &self.regressor_opt), ("disc", &self.discriminator_opt)] {
            for (k, v) in &opt.first_moment {
                tensors.insert(format!("opt.{tag}.m.{k}"), v.clone());
            }
            for (k, v) in &opt.second_moment {
                tensors.insert(format!("opt.{tag}.v.{k}"), v.clone());
            }
        }
        Checkpoint {
            mode: self.config.mode,
            meta: serde_json::to_string(&meta).expect("checkpoint metadata serializes"),
            tensors,
        }
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self, AdvPoseError> {
        let meta: CheckpointMeta = serde_json::from_str(&ckpt.meta)
            .map_err(|e| AdvPoseError::InvalidParams(format!("checkpoint metadata: {e}")))?;
        if meta.config.mode != ckpt.mode {
            return Err(AdvPoseError::ModeMismatch {
                expected: ckpt.mode,
                found: meta.config.mode,
            });
        }
        let pick = |prefix: &str| -> ParamStore {
            ParamStore::from_map(
                ckpt.tensors
                    .iter()
                    .filter(|(k, _)| k.starts_with(prefix))
                    .map(|(k, v)| (k.clone(), v.clone()))
                    .collect(),
            )
        };
        let regressor = Regressor::from_params(ckpt.mode, pick("reg."))?;
        let discriminator =
            Discriminator::from_params(ckpt.mode, meta.feature_dim, meta.config.use_features, pick("disc."))?;
        let opt = |tag: &str, step: u64| OptimizerState {
            config: meta.config.adam(),
            step,
            first_moment: split_prefixed(&ckpt.tensors, &format!("opt.{tag}.m.")),
            second_moment: split_prefixed(&ckpt.tensors, &format!("opt.{tag}.v.")),
        };
        Ok(TrainedModel {
            regressor_opt: opt("reg", meta.regressor_opt_step),
            discriminator_opt: opt("disc", meta.discriminator_opt_step),
            config: meta.config,
            regressor,
            discriminator,
            epochs_done: meta.epochs_done,
            log: meta.log,
        })
    }

    /// Runs the next epoch. Epochs before `warmup_epochs` train the
    /// regressor on the pose loss only; later epochs alternate regressor and
    /// discriminator steps on every mini-batch.
    pub fn run_epoch(&mut self, dataset: &Dataset) -> Result<&EpochLog, AdvPoseError> {
        if dataset.train.is_empty() {
            return Err(AdvPoseError::EmptyDataset);
        }
        let epoch = self.epochs_done;
        let adversarial = epoch >= self.config.warmup_epochs;
        let mut order: Vec<usize> = (0..dataset.train.len()).collect();
        order.shuffle(&mut seeds::rng(self.config.seed, STREAM_SHUFFLE + epoch as u64));

        let mut acc = EpochAccumulator::default();
        for (b, chunk) in order.chunks(self.config.batch_size).enumerate() {
            let batch: Vec<&FrameSample> = chunk.iter().map(|&i| &dataset.train[i]).collect();
            let abort = |e: AdvPoseError| match e {
                AdvPoseError::Diff(DiffError::NonFinite { .. })
                | AdvPoseError::Quat(QuatError::NearZeroQuaternion { .. }) => {
                    AdvPoseError::NonFiniteLoss { epoch, batch: b }
                }
                e => e,
            };
            let mut preds = Vec::new();
            for _ in 0..self.config.regressor_steps {
                preds = self.regressor_step(&batch, adversarial, &mut acc).map_err(abort)?;
            }
            if adversarial {
                for _ in 0..self.config.discriminator_steps {
                    self.discriminator_step(&batch, &preds, &mut acc).map_err(abort)?;
                }
            }
            if !acc.finite() {
                return Err(AdvPoseError::NonFiniteLoss { epoch, batch: b });
            }
        }
        self.epochs_done += 1;
        let log = acc.finish(epoch, adversarial, self.regressor.beta(), self.regressor.alpha());
        self.log.push(log);
        Ok(self.log.last().expect("just pushed"))
    }

    /// One regressor update. Returns the pre-update predictions as pose
    /// vectors, for use as fakes in the discriminator step.
    pub(crate) fn regressor_step(
        &mut self,
        batch: &[&FrameSample],
        adversarial: bool,
        acc: &mut EpochAccumulator,
    ) -> Result<Vec<Vec<f64>>, AdvPoseError> {
        let mode = self.config.mode;
        let mut tape = Tape::new();
        let rp = self.regressor.bind(&mut tape, true)?;
        let dp = if adversarial {
            Some(self.discriminator.bind(&mut tape, false)?)
        } else {
            None
        };
        let disc = dp.as_ref().map(|dp| (&self.discriminator, dp));
        let lambda = if adversarial { self.config.lambda } else { 0.0 };
        let mut losses = Vec::with_capacity(batch.len());
        let mut preds = Vec::with_capacity(batch.len());
        for s in batch {
            let terms = gen_loss_graph(
                &mut tape,
                &self.regressor,
                &rp,
                disc,
                &s.features,
                &s.observation,
                &s.pose_gt,
                lambda,
            )?;
            acc.pose_loss += terms.pose_loss;
            acc.pose_n += 1;
            if let Some(a) = terms.adv_loss {
                acc.adv_loss += a;
                acc.adv_n += 1;
            }
            preds.push(pose_vector(mode, &terms.pred));
            losses.push(terms.loss);
        }
        let loss = tape.mean_n(&losses)?;
        if !tape.value(loss).item().is_finite() {
            return Err(DiffError::NonFinite { op: "loss" }.into());
        }
        let grads = tape.backward(loss)?;
        self.regressor_opt.step(self.regressor.params_mut(), grads.named())?;
        Ok(preds)
    }

    pub(crate) fn discriminator_step(
        &mut self,
        batch: &[&FrameSample],
        preds: &[Vec<f64>],
        acc: &mut EpochAccumulator,
    ) -> Result<(), AdvPoseError> {
        let mode = self.config.mode;
        let mut tape = Tape::new();
        let dp = self.discriminator.bind(&mut tape, true)?;
        let mut losses = Vec::with_capacity(batch.len());
        for (s, pred) in batch.iter().zip(preds) {
            let gt = pose_vector(mode, &s.pose_gt);
            let terms = disc_loss_graph(&mut tape, &self.discriminator, &dp, &s.features, &gt, pred)?;
            acc.disc_loss += tape.value(terms.loss).item();
            acc.disc_n += 1;
            acc.real_correct += usize::from(terms.real > 0.5);
            acc.fake_correct += usize::from(terms.fake < 0.5);
            losses.push(terms.loss);
        }
        let loss = tape.mean_n(&losses)?;
        let grads = tape.backward(loss)?;
        self.discriminator_opt
            .step(self.discriminator.params_mut(), grads.named())?;
        Ok(())
    }
}

#[derive(Default)]
pub(crate) struct EpochAccumulator {
    pose_loss: f64,
    pose_n: usize,
    adv_loss: f64,
    adv_n: usize,
    disc_loss: f64,
    disc_n: usize,
    real_correct: usize,
    fake_correct: usize,
}

impl EpochAccumulator {
    fn finite(&self) -> bool {
        self.pose_loss.is_finite() && self.adv_loss.is_finite() && self.disc_loss.is_finite()
    }

    fn finish(self, epoch: usize, adversarial: bool, beta: f64, alpha: f64) -> EpochLog {
        let mean = |s: f64, n: usize| (n > 0).then(|| s / n as f64);
        EpochLog {
            epoch,
            adversarial,
            pose_loss: self.pose_loss / self.pose_n.max(1) as f64,
            adv_loss: mean(self.adv_loss, self.adv_n),
            disc_loss: mean(self.disc_loss, self.disc_n),
            disc_acc_real: mean(self.real_correct as f64, self.disc_n),
            disc_acc_fake: mean(self.fake_correct as f64, self.disc_n),
            beta,
            alpha,
        }
    }
}

/// Trains from scratch to `config.total_epochs`.
pub fn train(dataset: &Dataset, config: &TrainConfig) -> Result<TrainedModel, AdvPoseError> {
    if dataset.train.is_empty() {
        return Err(AdvPoseError::EmptyDataset);
    }
    let mut model = TrainedModel::init(dataset, config)?;
    while !model.is_finished() {
        model.run_epoch(dataset)?;
    }
    Ok(model)
}
