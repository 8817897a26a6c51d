use serde::{Deserialize, Serialize};

use super::losses::pose_vector;
use super::nets::Discriminator;
use super::AdvPoseError;
use crate::diff::{DiffError, Tape, Tensor};
use crate::quat::{
    geodesic_step, great_circle_update, literal_projection, tangent_project, LogQuaternion, Pose, Rotation, Translation,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RefineConfig {
    pub step_size: f64,
    pub max_iters: usize,
    /// Stop once both update norms fall below this.
    pub tol: f64,
    /// Target class for the refinement loss.
    pub target: f64,
    /// Use the printed projection `(I − g gᵀ) g` instead of the tangent projection.
    pub eq7_literal: bool,
}

impl Default for RefineConfig {
    fn default() -> Self {
        RefineConfig {
            step_size: 1e-3,
            max_iters: 50,
            tol: 1e-6,
            target: 0.5,
            eq7_literal: false,
        }
    }
}

impl RefineConfig {
    pub fn validate(&self) -> Result<(), AdvPoseError> {
        let bad = |m: &str| Err(AdvPoseError::InvalidConfig(m.to_string()));
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return bad("refine.step_size must be positive");
        }
        if self.max_iters == 0 {
            return bad("refine.max_iters must be at least 1");
        }
        if self.tol.is_nan() || self.tol < 0.0 {
            return bad("refine.tol must be non-negative");
        }
        if !(self.target > 0.0 && self.target < 1.0) {
            return bad("refine.target must lie in (0, 1)");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Converged,
    MaxIters,
    /// The discriminator produced a non-finite value; the last finite pose is kept.
    Diverged,
}

/// One refinement iteration. `loss`, `disc_output` and the gradient norms
/// are evaluated at the incoming pose; `pose` is the pose after the update.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefineStep {
    pub pose: Pose,
    pub loss: f64,
    pub disc_output: f64,
    pub grad_rotation_norm: f64,
    pub grad_translation_norm: f64,
    pub update_rotation_norm: f64,
    pub update_translation_norm: f64,
    /// `⟨v, q⟩` of the applied direction (quaternion mode only, else 0).
    pub direction_radial: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefinementTrace {
    pub steps: Vec<RefineStep>,
    pub stop: StopReason,
}

impl RefinementTrace {
    pub fn iterations(&self) -> usize {
        self.steps.len()
    }

    /// Number of iterations whose loss exceeded the previous one.
    pub fn non_monotonic_count(&self) -> usize {
        self.steps.windows(2).filter(|w| w[1].loss > w[0].loss).count()
    }

    /// Largest `|‖q‖ − 1|` over all emitted poses.
    pub fn max_norm_deviation(&self) -> f64 {
        self.steps
            .iter()
            .filter_map(|s| match s.pose.rotation {
                Rotation::Quat(q) => Some((q.norm() - 1.0).abs()),
                Rotation::Log(_) => None,
            })
            .fold(0.0, f64::max)
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

struct Evaluation {
    loss: f64,
    disc_output: f64,
    grad: Vec<f64>,
}

fn evaluate(disc: &Discriminator, features: &[f64], pose: &[f64], target: f64) -> Result<Evaluation, AdvPoseError> {
    let mut tape = Tape::new();
    let p = disc.bind(&mut tape, false)?;
    let x = tape.leaf(Tensor::vector(pose.to_vec()), true)?;
    let d = disc.forward(&mut tape, &p, features, x)?;
    let l = tape.bce(d, target)?;
    let (loss, disc_output) = (tape.value(l).item(), tape.value(d).item());
    let grads = tape.backward(l)?;
    let grad = grads.get(x).expect("pose gradient").data().to_vec();
    Ok(Evaluation {
        loss,
        disc_output,
        grad,
    })
}

/// Moves `pose0` down the gradient of `bce(D(f, p), c)` with the
/// discriminator frozen. Quaternions follow great circles of the unit
/// sphere; log-quaternions and translations take plain gradient steps.
pub fn refine_pose(
    disc: &Discriminator,
    features: &[f64],
    pose0: &Pose,
    config: &RefineConfig,
) -> Result<(Pose, RefinementTrace), AdvPoseError> {
    let mode = disc.mode();
    if pose0.mode() != mode {
        return Err(AdvPoseError::ModeMismatch {
            expected: mode,
            found: pose0.mode(),
        });
    }
    if disc.use_features() && features.len() != disc.feature_dim() {
        return Err(AdvPoseError::ShapeMismatch {
            expected: disc.feature_dim(),
            got: features.len(),
        });
    }
    let l = config.step_size;
    let r = mode.rotation_dim();
    let mut pose = *pose0;
    let mut steps = Vec::with_capacity(config.max_iters);
    let mut stop = StopReason::MaxIters;

    for _ in 0..config.max_iters {
        let x = pose_vector(mode, &pose);
        let eval = match evaluate(disc, features, &x, config.target) {
            Ok(e) => e,
            Err(AdvPoseError::Diff(DiffError::NonFinite { .. })) => {
                stop = StopReason::Diverged;
                break;
            }
            Err(e) => return Err(e),
        };
        let (gq, gt) = eval.grad.split_at(r);

        let t_old = pose.translation.0;
        let t_new = [t_old[0] - l * gt[0], t_old[1] - l * gt[1], t_old[2] - l * gt[2]];
        let mut radial = 0.0;
        let (rotation, dq) = match pose.rotation {
            Rotation::Quat(q) => {
                let g = [-gq[0], -gq[1], -gq[2], -gq[3]];
                let q_new = if config.eq7_literal {
                    let v = literal_projection(g);
                    radial = dot4(&v, &q.to_array());
                    great_circle_update(&q, v, l)
                } else {
                    let v = tangent_project(&q, g);
                    radial = dot4(&v.v, &q.to_array());
                    geodesic_step(&q, &v, l)
                };
                let (a, b) = (q.to_array(), q_new.to_array());
                let d = norm(&[b[0] - a[0], b[1] - a[1], b[2] - a[2], b[3] - a[3]]);
                (Rotation::Quat(q_new), d)
            }
            Rotation::Log(v) => {
                let w = [v.v[0] - l * gq[0], v.v[1] - l * gq[1], v.v[2] - l * gq[2]];
                let d = norm(&[w[0] - v.v[0], w[1] - v.v[1], w[2] - v.v[2]]);
                (Rotation::Log(LogQuaternion::new(w)), d)
            }
        };
        let dt = norm(&[t_new[0] - t_old[0], t_new[1] - t_old[1], t_new[2] - t_old[2]]);
        pose = Pose::new(rotation, Translation(t_new));
        steps.push(RefineStep {
            pose,
            loss: eval.loss,
            disc_output: eval.disc_output,
            grad_rotation_norm: norm(gq),
            grad_translation_norm: norm(gt),
            update_rotation_norm: dq,
            update_translation_norm: dt,
            direction_radial: radial,
        });
        if dq < config.tol && dt < config.tol {
            stop = StopReason::Converged;
            break;
        }
    }
    Ok((pose, RefinementTrace { steps, stop }))
}

fn dot4(a: &[f64; 4], b: &[f64; 4]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2] + a[3] * b[3]
}
