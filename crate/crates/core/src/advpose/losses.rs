use std::collections::BTreeMap;

use super::nets::{Bound, Discriminator, RegOut, Regressor, ALPHA, BETA};
use super::AdvPoseError;
use crate::diff::{bce, Tape, Tensor, Var};
use crate::quat::{Pose, Rotation, RotationMode, Translation, UnitQuaternion};

/// Pose vector of `pose` expressed in `mode`.
pub fn pose_vector(mode: RotationMode, pose: &Pose) -> Vec<f64> {
    pose.to_mode(mode).to_vector()
}

/// Rotation target for a prediction. In quaternion mode the ground truth is
/// flipped onto the hemisphere of the prediction first.
pub fn aligned_rotation(mode: RotationMode, pred_rotation: &[f64], gt: &Pose) -> Vec<f64> {
    let v = pose_vector(mode, gt);
    let mut r = v[..mode.rotation_dim()].to_vec();
    if mode == RotationMode::Quaternion {
        let dot: f64 = r.iter().zip(pred_rotation).map(|(a, b)| a * b).sum();
        if dot < 0.0 {
            r.iter_mut().for_each(|x| *x = -*x);
        }
    }
    r
}

fn l1(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

/// `‖t − t̂‖₁ e^{−β} + β + ‖q − q̂‖₁ e^{−α} + α`, with `gt` converted to the
/// prediction's parameterization.
pub fn pose_loss(pred: &Pose, gt: &Pose, beta: f64, alpha: f64) -> f64 {
    let mode = pred.mode();
    let p = pred.to_vector();
    let r = mode.rotation_dim();
    let q_gt = aligned_rotation(mode, &p[..r], gt);
    let dt = l1(&p[r..], &gt.translation.0);
    let dq = l1(&p[..r], &q_gt);
    (dt * (-beta).exp() + beta) + (dq * (-alpha).exp() + alpha)
}

/// [`pose_loss`] on a tape.
pub fn pose_loss_graph(
    tape: &mut Tape,
    mode: RotationMode,
    out: RegOut,
    gt: &Pose,
    beta: Var,
    alpha: Var,
) -> Result<Var, AdvPoseError> {
    let q_gt = aligned_rotation(mode, tape.value(out.rotation).data(), gt);
    let q_gt = tape.constant(Tensor::vector(q_gt))?;
    let t_gt = tape.constant(Tensor::vector(gt.translation.0.to_vec()))?;
    let dt = tape.l1_distance(out.translation, t_gt)?;
    let dq = tape.l1_distance(out.rotation, q_gt)?;
    let mut weighted = |d: Var, s: Var| -> Result<Var, AdvPoseError> {
        let neg = tape.scale(s, -1.0)?;
        let w = tape.exp(neg)?;
        let dw = tape.mul(d, w)?;
        Ok(tape.add(dw, s)?)
    };
    let lt = weighted(dt, beta)?;
    let lq = weighted(dq, alpha)?;
    Ok(tape.add(lt, lq)?)
}

/// Full pose vector `[rotation, translation]` of a regressor output.
pub fn pose_var(tape: &mut Tape, out: RegOut) -> Result<Var, AdvPoseError> {
    Ok(tape.concat(out.rotation, out.translation)?)
}

fn pose_from_values(mode: RotationMode, rotation: &[f64], translation: &[f64]) -> Pose {
    let t = Translation([translation[0], translation[1], translation[2]]);
    let r = match mode {
        RotationMode::Quaternion => {
            // Already normalized and canonical on the tape.
            Rotation::Quat(UnitQuaternion::from_stored([
                rotation[0],
                rotation[1],
                rotation[2],
                rotation[3],
            ]))
        }
        RotationMode::LogQuaternion => {
            Rotation::Log(crate::quat::LogQuaternion::new([rotation[0], rotation[1], rotation[2]]))
        }
    };
    Pose::new(r, t)
}

/// Regressor output for a tape node pair.
pub fn pose_from_out(tape: &Tape, mode: RotationMode, out: RegOut) -> Pose {
    pose_from_values(
        mode,
        tape.value(out.rotation).data(),
        tape.value(out.translation).data(),
    )
}

/// Forward pass of the regressor on one observation.
pub fn regress_pose(regressor: &Regressor, observation: &[f64]) -> Result<Pose, AdvPoseError> {
    let mut tape = Tape::new();
    let p = regressor.bind(&mut tape, false)?;
    let out = regressor.forward(&mut tape, &p, observation)?;
    Ok(pose_from_out(&tape, regressor.mode(), out))
}

/// Discriminator score for a raw pose vector (no normalization applied).
pub fn disc_forward_vector(disc: &Discriminator, features: &[f64], pose: &[f64]) -> Result<f64, AdvPoseError> {
    let mut tape = Tape::new();
    let p = disc.bind(&mut tape, false)?;
    let x = tape.constant(Tensor::vector(pose.to_vec()))?;
    let d = disc.forward(&mut tape, &p, features, x)?;
    Ok(tape.value(d).item())
}

/// Discriminator score of `(features, pose)`, with the pose expressed in the
/// discriminator's parameterization.
pub fn disc_forward(disc: &Discriminator, features: &[f64], pose: &Pose) -> Result<f64, AdvPoseError> {
    disc_forward_vector(disc, features, &pose_vector(disc.mode(), pose))
}

/// Discriminator loss terms on a tape. Both poses enter as constants.
pub struct DiscTerms {
    pub loss: Var,
    pub real: f64,
    pub fake: f64,
}

pub fn disc_loss_graph(
    tape: &mut Tape,
    disc: &Discriminator,
    p: &Bound,
    features: &[f64],
    gt: &[f64],
    pred: &[f64],
) -> Result<DiscTerms, AdvPoseError> {
    let real_in = tape.constant(Tensor::vector(gt.to_vec()))?;
    let fake_in = tape.constant(Tensor::vector(pred.to_vec()))?;
    let real = disc.forward(tape, p, features, real_in)?;
    let fake = disc.forward(tape, p, features, fake_in)?;
    let lr = tape.bce(real, 1.0)?;
    let lf = tape.bce(fake, 0.0)?;
    Ok(DiscTerms {
        loss: tape.add(lr, lf)?,
        real: tape.value(real).item(),
        fake: tape.value(fake).item(),
    })
}

/// `bce(D(f, p), 1) + bce(D(f, p̂), 0)`.
pub fn disc_loss(disc: &Discriminator, features: &[f64], gt: &Pose, pred: &Pose) -> Result<f64, AdvPoseError> {
    let real = disc_forward(disc, features, gt)?;
    let fake = disc_forward(disc, features, pred)?;
    Ok(bce(real, 1.0) + bce(fake, 0.0))
}

/// [`disc_loss`] with gradients for every discriminator parameter.
pub fn disc_loss_with_grads(
    disc: &Discriminator,
    features: &[f64],
    gt: &Pose,
    pred: &Pose,
) -> Result<(f64, BTreeMap<String, Tensor>), AdvPoseError> {
    let mut tape = Tape::new();
    let p = disc.bind(&mut tape, true)?;
    let mode = disc.mode();
    let terms = disc_loss_graph(
        &mut tape,
        disc,
        &p,
        features,
        &pose_vector(mode, gt),
        &pose_vector(mode, pred),
    )?;
    let value = tape.value(terms.loss).item();
    Ok((value, tape.backward(terms.loss)?.into_named()))
}

/// Generator loss terms on a tape.
pub struct GenTerms {
    pub loss: Var,
    pub pose_loss: f64,
    /// `bce(D(f, p̂), 1)`, present when a discriminator was supplied.
    pub adv_loss: Option<f64>,
    pub pred: Pose,
}

/// `L_pose + λ·bce(D(f, p̂), 1)`. With `disc` absent, or `lambda == 0`, the
/// adversarial term is left out of the graph entirely.
#[allow(clippy::too_many_arguments)]
pub fn gen_loss_graph(
    tape: &mut Tape,
    regressor: &Regressor,
    rp: &Bound,
    disc: Option<(&Discriminator, &Bound)>,
    features: &[f64],
    observation: &[f64],
    gt: &Pose,
    lambda: f64,
) -> Result<GenTerms, AdvPoseError> {
    let mode = regressor.mode();
    let out = regressor.forward(tape, rp, observation)?;
    let lp = pose_loss_graph(tape, mode, out, gt, rp[BETA], rp[ALPHA])?;
    let pred = pose_from_out(tape, mode, out);
    let pose_loss = tape.value(lp).item();
    let mut loss = lp;
    let mut adv_loss = None;
    if let Some((disc, dp)) = disc {
        let x = pose_var(tape, out)?;
        let d = disc.forward(tape, dp, features, x)?;
        let adv = tape.bce(d, 1.0)?;
        adv_loss = Some(tape.value(adv).item());
        if lambda != 0.0 {
            let weighted = tape.scale(adv, lambda)?;
            loss = tape.add(lp, weighted)?;
        }
    }
    Ok(GenTerms {
        loss,
        pose_loss,
        adv_loss,
        pred,
    })
}

/// Value of the generator loss for one sample.
pub fn gen_loss(
    regressor: &Regressor,
    disc: &Discriminator,
    features: &[f64],
    observation: &[f64],
    gt: &Pose,
    lambda: f64,
) -> Result<f64, AdvPoseError> {
    let mut tape = Tape::new();
    let rp = regressor.bind(&mut tape, false)?;
    let dp = disc.bind(&mut tape, false)?;
    let terms = gen_loss_graph(
        &mut tape,
        regressor,
        &rp,
        Some((disc, &dp)),
        features,
        observation,
        gt,
        lambda,
    )?;
    Ok(tape.value(terms.loss).item())
}

/// [`gen_loss`] with gradients for every regressor parameter. The
/// discriminator enters as constants.
pub fn gen_loss_with_grads(
    regressor: &Regressor,
    disc: &Discriminator,
    features: &[f64],
    observation: &[f64],
    gt: &Pose,
    lambda: f64,
) -> Result<(f64, BTreeMap<String, Tensor>), AdvPoseError> {
    let mut tape = Tape::new();
    let rp = regressor.bind(&mut tape, true)?;
    let dp = disc.bind(&mut tape, false)?;
    let terms = gen_loss_graph(
        &mut tape,
        regressor,
        &rp,
        Some((disc, &dp)),
        features,
        observation,
        gt,
        lambda,
    )?;
    let value = tape.value(terms.loss).item();
    Ok((value, tape.backward(terms.loss)?.into_named()))
}

/// `bce(D(f, p), c)` for a raw pose vector.
pub fn refine_loss(disc: &Discriminator, features: &[f64], pose: &[f64], target: f64) -> Result<f64, AdvPoseError> {
    Ok(bce(disc_forward_vector(disc, features, pose)?, target))
}
