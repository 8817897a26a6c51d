use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::losses::{disc_forward, regress_pose};
use super::nets::{Discriminator, Regressor};
use super::refine::{refine_pose, RefineConfig, StopReason};
use super::AdvPoseError;
use crate::quat::{rotation_error_deg, translation_error, Pose};
use crate::scenes::FrameSample;

/// Median; the mean of the two central values for even lengths. NaN when empty.
pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// `(before − after) / before`, zero when `before` is zero.
pub fn relative_improvement(before: f64, after: f64) -> f64 {
    if before == 0.0 {
        0.0
    } else {
        (before - after) / before
    }
}

/// Errors of one frame before and after refinement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameResult {
    pub rot_before: f64,
    pub trans_before: f64,
    pub rot_after: f64,
    pub trans_after: f64,
    pub iterations: usize,
    pub stop: Option<StopReason>,
    pub non_monotonic: usize,
    pub max_norm_deviation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub rot_before: Vec<f64>,
    pub trans_before: Vec<f64>,
    pub rot_after: Vec<f64>,
    pub trans_after: Vec<f64>,
    /// Refinement iterations per frame.
    pub iterations: Vec<usize>,
    /// Stop reason per frame; absent when the frame was not refined.
    pub stops: Vec<Option<StopReason>>,
    pub median_rot_before: f64,
    pub median_rot_after: f64,
    pub median_trans_before: f64,
    pub median_trans_after: f64,
    pub mean_rot_before: f64,
    pub mean_rot_after: f64,
    pub mean_trans_before: f64,
    pub mean_trans_after: f64,
    pub rel_improvement_rot: f64,
    pub rel_improvement_trans: f64,
    pub converged: usize,
    pub max_iters: usize,
    pub diverged: usize,
    pub mean_iterations: f64,
    /// Frames whose refinement loss rose at least once.
    pub non_monotonic_frames: usize,
    /// Largest `|‖q‖ − 1|` over every pose emitted during refinement.
    pub max_norm_deviation: f64,
}

impl Metrics {
    pub fn from_frames(frames: &[FrameResult]) -> Self {
        let col = |f: fn(&FrameResult) -> f64| frames.iter().map(f).collect::<Vec<_>>();
        let rot_before = col(|f| f.rot_before);
        let trans_before = col(|f| f.trans_before);
        let rot_after = col(|f| f.rot_after);
        let trans_after = col(|f| f.trans_after);
        let count = |s: StopReason| frames.iter().filter(|f| f.stop == Some(s)).count();
        let (mrb, mra) = (median(&rot_before), median(&rot_after));
        let (mtb, mta) = (median(&trans_before), median(&trans_after));
        Metrics {
            median_rot_before: mrb,
            median_rot_after: mra,
            median_trans_before: mtb,
            median_trans_after: mta,
            mean_rot_before: mean(&rot_before),
            mean_rot_after: mean(&rot_after),
            mean_trans_before: mean(&trans_before),
            mean_trans_after: mean(&trans_after),
            rel_improvement_rot: relative_improvement(mrb, mra),
            rel_improvement_trans: relative_improvement(mtb, mta),
            converged: count(StopReason::Converged),
            max_iters: count(StopReason::MaxIters),
            diverged: count(StopReason::Diverged),
            mean_iterations: mean(&col(|f| f.iterations as f64)),
            non_monotonic_frames: frames.iter().filter(|f| f.non_monotonic > 0).count(),
            max_norm_deviation: frames.iter().map(|f| f.max_norm_deviation).fold(0.0, f64::max),
            iterations: frames.iter().map(|f| f.iterations).collect(),
            stops: frames.iter().map(|f| f.stop).collect(),
            rot_before,
            trans_before,
            rot_after,
            trans_after,
        }
    }
}

fn errors(pred: &Pose, gt: &Pose) -> (f64, f64) {
    (
        rotation_error_deg(&pred.unit_quaternion(), &gt.unit_quaternion()),
        translation_error(&pred.translation, &gt.translation),
    )
}

/// Regresses (and optionally refines) one frame.
pub fn evaluate_frame(
    regressor: &Regressor,
    refine: Option<(&Discriminator, &RefineConfig)>,
    frame: &FrameSample,
) -> Result<FrameResult, AdvPoseError> {
    let pred = regress_pose(regressor, &frame.observation)?;
    let (rot_before, trans_before) = errors(&pred, &frame.pose_gt);
    let mut out = FrameResult {
        rot_before,
        trans_before,
        rot_after: rot_before,
        trans_after: trans_before,
        iterations: 0,
        stop: None,
        non_monotonic: 0,
        max_norm_deviation: 0.0,
    };
    if let Some((disc, cfg)) = refine {
        if cfg.max_iters > 0 {
            let (refined, trace) = refine_pose(disc, &frame.features, &pred, cfg)?;
            let (r, t) = errors(&refined, &frame.pose_gt);
            out.rot_after = r;
            out.trans_after = t;
            out.iterations = trace.iterations();
            out.stop = Some(trace.stop);
            out.non_monotonic = trace.non_monotonic_count();
            out.max_norm_deviation = trace.max_norm_deviation();
        }
    }
    Ok(out)
}

/// Per-frame errors over `frames`, computed in parallel. The result does not
/// depend on the number of worker threads.
pub fn evaluate(
    regressor: &Regressor,
    disc: Option<&Discriminator>,
    frames: &[FrameSample],
    refine: Option<&RefineConfig>,
) -> Result<Metrics, AdvPoseError> {
    if frames.is_empty() {
        return Err(AdvPoseError::EmptyDataset);
    }
    let refine = match (disc, refine) {
        (Some(d), Some(c)) => Some((d, c)),
        (None, Some(_)) => return Err(AdvPoseError::InvalidConfig("refinement needs a discriminator".into())),
        _ => None,
    };
    let results = frames
        .par_iter()
        .map(|f| evaluate_frame(regressor, refine, f))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Metrics::from_frames(&results))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiscAccuracy {
    pub real: f64,
    pub fake: f64,
    pub overall: f64,
}

/// Fraction of ground-truth poses scored above 0.5 and of regressed poses
/// scored below 0.5.
pub fn discriminator_accuracy(
    regressor: &Regressor,
    disc: &Discriminator,
    frames: &[FrameSample],
) -> Result<DiscAccuracy, AdvPoseError> {
    if frames.is_empty() {
        return Err(AdvPoseError::EmptyDataset);
    }
    let hits = frames
        .par_iter()
        .map(|f| {
            let pred = regress_pose(regressor, &f.observation)?;
            let real = disc_forward(disc, &f.features, &f.pose_gt)?;
            let fake = disc_forward(disc, &f.features, &pred)?;
            Ok((usize::from(real > 0.5), usize::from(fake < 0.5)))
        })
        .collect::<Result<Vec<_>, AdvPoseError>>()?;
    let n = frames.len() as f64;
    let real = hits.iter().map(|h| h.0).sum::<usize>() as f64 / n;
    let fake = hits.iter().map(|h| h.1).sum::<usize>() as f64 / n;
    Ok(DiscAccuracy {
        real,
        fake,
        overall: 0.5 * (real + fake),
    })
}
