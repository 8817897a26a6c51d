//! Quaternion and pose mathematics.
//!
//! Two rotation parameterizations are supported: unit quaternions `[w, u]`
//! living on the 3-sphere and log-quaternions (axis scaled by the half-angle).
//! The module also carries the pieces refinement needs on the sphere: tangent
//! projection of a Euclidean gradient and the great-circle update.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Raw quaternions at or below this norm cannot be normalized.
pub const MIN_QUATERNION_NORM: f64 = 1e-12;

/// Below this log-quaternion norm `quat_exp` uses the first-order limit.
const EXP_SMALL_ANGLE: f64 = 1e-8;

/// Below this tangent norm the geodesic update falls back to `q + v·l`.
const GEODESIC_SMALL_GAMMA: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum QuatError {
    #[error("quaternion norm {norm:e} is too small to normalize")]
    NearZeroQuaternion { norm: f64 },
}

/// Which rotation parameterization a pose (and every network head) uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RotationMode {
    #[serde(rename = "quat")]
    Quaternion,
    #[serde(rename = "logq")]
    LogQuaternion,
}

impl RotationMode {
    /// Width of the rotation part of a pose vector (4 or 3).
    pub fn rotation_dim(self) -> usize {
        match self {
            RotationMode::Quaternion => 4,
            RotationMode::LogQuaternion => 3,
        }
    }

    /// Width of the full pose vector `[rotation, translation]`.
    pub fn pose_dim(self) -> usize {
        self.rotation_dim() + 3
    }

    /// Default feature width for this mode (70 for quaternions, 60 for log-quaternions).
    pub fn default_feature_dim(self) -> usize {
        match self {
            RotationMode::Quaternion => 70,
            RotationMode::LogQuaternion => 60,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            RotationMode::Quaternion => "quat",
            RotationMode::LogQuaternion => "logq",
        }
    }

    pub fn code(self) -> u8 {
        match self {
            RotationMode::Quaternion => 0,
            RotationMode::LogQuaternion => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(RotationMode::Quaternion),
            1 => Some(RotationMode::LogQuaternion),
            _ => None,
        }
    }
}

impl std::fmt::Display for RotationMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for RotationMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "quat" => Ok(RotationMode::Quaternion),
            "logq" => Ok(RotationMode::LogQuaternion),
            other => Err(format!("unknown rotation mode `{other}` (expected quat or logq)")),
        }
    }
}

pub(crate) fn dot3(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub(crate) fn norm3(a: &[f64; 3]) -> f64 {
    dot3(a, a).sqrt()
}

pub(crate) fn cross3(a: &[f64; 3], b: &[f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn dot4(a: &[f64; 4], b: &[f64; 4]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2] + a[3] * b[3]
}

fn norm4(a: &[f64; 4]) -> f64 {
    dot4(a, a).sqrt()
}

/// A rotation stored as a unit quaternion `[w, x, y, z]`.
///
/// Construction from a raw 4-vector goes through [`normalize`], which also
/// picks the `w >= 0` representative. Maps that must stay continuous on the
/// sphere ([`quat_exp`], [`geodesic_step`]) only renormalize.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnitQuaternion {
    w: f64,
    u: [f64; 3],
}

impl UnitQuaternion {
    pub const IDENTITY: UnitQuaternion = UnitQuaternion {
        w: 1.0,
        u: [0.0, 0.0, 0.0],
    };

    /// Renormalizes without choosing a hemisphere. Callers guarantee a norm
    /// well away from zero.
    pub(crate) fn renormalized(raw: [f64; 4]) -> Self {
        let n = norm4(&raw);
        UnitQuaternion {
            w: raw[0] / n,
            u: [raw[1] / n, raw[2] / n, raw[3] / n],
        }
    }

    /// Stores the components as given. Used when reading back values that
    /// were unit quaternions when written.
    pub(crate) fn from_stored(raw: [f64; 4]) -> Self {
        UnitQuaternion {
            w: raw[0],
            u: [raw[1], raw[2], raw[3]],
        }
    }

    /// Rotation of `angle_rad` about `axis` (need not be unit length).
    pub fn from_axis_angle(axis: [f64; 3], angle_rad: f64) -> Result<Self, QuatError> {
        let n = norm3(&axis);
        if n <= MIN_QUATERNION_NORM {
            return Err(QuatError::NearZeroQuaternion { norm: n });
        }
        let (s, c) = (0.5 * angle_rad).sin_cos();
        normalize([c, s * axis[0] / n, s * axis[1] / n, s * axis[2] / n])
    }

    pub fn w(&self) -> f64 {
        self.w
    }

    pub fn u(&self) -> [f64; 3] {
        self.u
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.w, self.u[0], self.u[1], self.u[2]]
    }

    pub fn norm(&self) -> f64 {
        norm4(&self.to_array())
    }

    /// The antipodal representative `-q` (same rotation).
    pub fn negated(&self) -> Self {
        UnitQuaternion {
            w: -self.w,
            u: [-self.u[0], -self.u[1], -self.u[2]],
        }
    }

    /// The `w >= 0` representative.
    pub fn canonical(&self) -> Self {
        if self.w < 0.0 {
            self.negated()
        } else {
            *self
        }
    }

    pub fn conjugate(&self) -> Self {
        UnitQuaternion {
            w: self.w,
            u: [-self.u[0], -self.u[1], -self.u[2]],
        }
    }

    /// Hamilton product `self ⊗ other`.
    pub fn mul(&self, other: &UnitQuaternion) -> Self {
        let (a, b) = (self, other);
        let c = cross3(&a.u, &b.u);
        let w = a.w * b.w - dot3(&a.u, &b.u);
        let u = [
            a.w * b.u[0] + b.w * a.u[0] + c[0],
            a.w * b.u[1] + b.w * a.u[1] + c[1],
            a.w * b.u[2] + b.w * a.u[2] + c[2],
        ];
        UnitQuaternion::renormalized([w, u[0], u[1], u[2]])
    }

    /// Rotates `v` by this quaternion (`q v q*`).
    pub fn rotate(&self, v: [f64; 3]) -> [f64; 3] {
        // v' = v + 2w (u × v) + 2 u × (u × v)
        let uv = cross3(&self.u, &v);
        let uuv = cross3(&self.u, &uv);
        [
            v[0] + 2.0 * (self.w * uv[0] + uuv[0]),
            v[1] + 2.0 * (self.w * uv[1] + uuv[1]),
            v[2] + 2.0 * (self.w * uv[2] + uuv[2]),
        ]
    }
}

/// Axis scaled by half the rotation angle, in radians.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogQuaternion {
    pub v: [f64; 3],
}

impl LogQuaternion {
    pub fn new(v: [f64; 3]) -> Self {
        LogQuaternion { v }
    }

    pub fn norm(&self) -> f64 {
        norm3(&self.v)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Translation(pub [f64; 3]);

impl Translation {
    pub const ZERO: Translation = Translation([0.0; 3]);
}

/// A direction in the tangent space of the 3-sphere at some base quaternion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TangentVector {
    pub v: [f64; 4],
}

impl TangentVector {
    pub fn norm(&self) -> f64 {
        norm4(&self.v)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Rotation {
    Quat(UnitQuaternion),
    Log(LogQuaternion),
}

impl Rotation {
    pub fn mode(&self) -> RotationMode {
        match self {
            Rotation::Quat(_) => RotationMode::Quaternion,
            Rotation::Log(_) => RotationMode::LogQuaternion,
        }
    }

    /// The rotation as a unit quaternion, whatever the parameterization.
    pub fn to_unit(&self) -> UnitQuaternion {
        match self {
            Rotation::Quat(q) => *q,
            Rotation::Log(v) => quat_exp(v),
        }
    }
}

/// Camera pose `p = [rotation, t]`. The camera maps a world point `x` to
/// `R(q)⁻¹ (x − t)`, i.e. `t` is the camera centre in world coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub rotation: Rotation,
    pub translation: Translation,
}

impl Pose {
    pub fn new(rotation: Rotation, translation: Translation) -> Self {
        Pose { rotation, translation }
    }

    pub fn identity(mode: RotationMode) -> Self {
        let rotation = match mode {
            RotationMode::Quaternion => Rotation::Quat(UnitQuaternion::IDENTITY),
            RotationMode::LogQuaternion => Rotation::Log(LogQuaternion::new([0.0; 3])),
        };
        Pose::new(rotation, Translation::ZERO)
    }

    pub fn mode(&self) -> RotationMode {
        self.rotation.mode()
    }

    pub fn unit_quaternion(&self) -> UnitQuaternion {
        self.rotation.to_unit()
    }

    /// Re-expresses the rotation in `mode`. Converting to quaternions yields
    /// the canonical (`w >= 0`) representative.
    pub fn to_mode(&self, mode: RotationMode) -> Pose {
        if self.mode() == mode {
            return *self;
        }
        let rotation = match mode {
            RotationMode::Quaternion => Rotation::Quat(self.unit_quaternion().canonical()),
            RotationMode::LogQuaternion => Rotation::Log(quat_log(&self.unit_quaternion())),
        };
        Pose::new(rotation, self.translation)
    }

    /// Flat pose vector `[rotation..., tx, ty, tz]` of length 7 or 6.
    pub fn to_vector(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.mode().pose_dim());
        match &self.rotation {
            Rotation::Quat(q) => out.extend_from_slice(&q.to_array()),
            Rotation::Log(l) => out.extend_from_slice(&l.v),
        }
        out.extend_from_slice(&self.translation.0);
        out
    }

    /// Inverse of [`Pose::to_vector`]. Quaternion entries are normalized.
    pub fn from_vector(mode: RotationMode, values: &[f64]) -> Result<Pose, QuatError> {
        assert_eq!(values.len(), mode.pose_dim(), "pose vector length");
        let r = mode.rotation_dim();
        let rotation = match mode {
            RotationMode::Quaternion => Rotation::Quat(normalize([values[0], values[1], values[2], values[3]])?),
            RotationMode::LogQuaternion => Rotation::Log(LogQuaternion::new([values[0], values[1], values[2]])),
        };
        let t = Translation([values[r], values[r + 1], values[r + 2]]);
        Ok(Pose::new(rotation, t))
    }
}

/// Logarithm of a unit quaternion: `(u/‖u‖)·arccos(w)`, or zero when `u = 0`.
pub fn quat_log(q: &UnitQuaternion) -> LogQuaternion {
    let u = q.u();
    let n = norm3(&u);
    if n == 0.0 {
        return LogQuaternion::new([0.0; 3]);
    }
    let angle = q.w().clamp(-1.0, 1.0).acos();
    let s = angle / n;
    LogQuaternion::new([u[0] * s, u[1] * s, u[2] * s])
}

/// Exponential map back to the unit sphere: `[cos‖v‖, (v/‖v‖) sin‖v‖]`.
pub fn quat_exp(v: &LogQuaternion) -> UnitQuaternion {
    let n = v.norm();
    if n < EXP_SMALL_ANGLE {
        return UnitQuaternion::renormalized([1.0, v.v[0], v.v[1], v.v[2]]);
    }
    let (s, c) = n.sin_cos();
    let k = s / n;
    UnitQuaternion::renormalized([c, v.v[0] * k, v.v[1] * k, v.v[2] * k])
}

/// Normalizes a raw 4-vector onto the unit sphere and picks `w >= 0`.
pub fn normalize(raw: [f64; 4]) -> Result<UnitQuaternion, QuatError> {
    let n = norm4(&raw);
    if n.is_nan() || n <= MIN_QUATERNION_NORM {
        return Err(QuatError::NearZeroQuaternion { norm: n });
    }
    Ok(UnitQuaternion::renormalized(raw).canonical())
}

/// Removes the radial component of `grad` at `q`: `(I − q qᵀ) grad`.
pub fn tangent_project(q: &UnitQuaternion, grad: [f64; 4]) -> TangentVector {
    let qa = q.to_array();
    let along = dot4(&qa, &grad);
    TangentVector {
        v: [
            grad[0] - along * qa[0],
            grad[1] - along * qa[1],
            grad[2] - along * qa[2],
            grad[3] - along * qa[3],
        ],
    }
}

/// The projection formula exactly as printed, `(I − g gᵀ) g = g (1 − ‖g‖²)`.
///
/// Not a tangent vector in general; only used for comparison runs.
pub fn literal_projection(grad: [f64; 4]) -> [f64; 4] {
    let k = 1.0 - dot4(&grad, &grad);
    [grad[0] * k, grad[1] * k, grad[2] * k, grad[3] * k]
}

/// Moves `q` along the great circle in direction `v` by arc length `‖v‖·l`,
/// then renormalizes.
pub fn geodesic_step(q: &UnitQuaternion, v: &TangentVector, step: f64) -> UnitQuaternion {
    debug_assert!(
        dot4(&q.to_array(), &v.v).abs() <= 1e-6 * (1.0 + v.norm()),
        "direction is not tangent at q"
    );
    great_circle_update(q, v.v, step)
}

/// The geodesic update formula applied to an arbitrary direction.
pub(crate) fn great_circle_update(q: &UnitQuaternion, v: [f64; 4], step: f64) -> UnitQuaternion {
    let qa = q.to_array();
    let gamma = norm4(&v);
    let raw = if gamma < GEODESIC_SMALL_GAMMA {
        [
            qa[0] + v[0] * step,
            qa[1] + v[1] * step,
            qa[2] + v[2] * step,
            qa[3] + v[3] * step,
        ]
    } else {
        let (s, c) = (gamma * step).sin_cos();
        let k = s / gamma;
        [
            qa[0] * c + v[0] * k,
            qa[1] * c + v[1] * k,
            qa[2] * c + v[2] * k,
            qa[3] * c + v[3] * k,
        ]
    };
    UnitQuaternion::renormalized(raw)
}

/// Angle of the relative rotation between `q1` and `q2`, in degrees.
///
/// Equal to `2·arccos(min(1, |⟨q1, q2⟩|))`, evaluated as
/// `4·atan2(‖q1 − s q2‖, ‖q1 + s q2‖)` with `s = sign⟨q1, q2⟩`, which stays
/// accurate for nearly identical rotations where `arccos` loses precision.
pub fn rotation_error_deg(q1: &UnitQuaternion, q2: &UnitQuaternion) -> f64 {
    let (a, b) = (q1.to_array(), q2.to_array());
    let s = if dot4(&a, &b) < 0.0 { -1.0 } else { 1.0 };
    let diff = [a[0] - s * b[0], a[1] - s * b[1], a[2] - s * b[2], a[3] - s * b[3]];
    let sum = [a[0] + s * b[0], a[1] + s * b[1], a[2] + s * b[2], a[3] + s * b[3]];
    (4.0 * norm4(&diff).atan2(norm4(&sum))).to_degrees()
}

/// Euclidean distance between two translations.
pub fn translation_error(t1: &Translation, t2: &Translation) -> f64 {
    let d = [t1.0[0] - t2.0[0], t1.0[1] - t2.0[1], t1.0[2] - t2.0[2]];
    norm3(&d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use std::f64::consts::{FRAC_1_SQRT_2, FRAC_PI_2, FRAC_PI_4};

    // Independent oracle: quaternion -> rotation matrix -> axis-angle.
    fn to_matrix(q: [f64; 4]) -> [[f64; 3]; 3] {
        let [w, x, y, z] = q;
        [
            [
                1.0 - 2.0 * (y * y + z * z),
                2.0 * (x * y - w * z),
                2.0 * (x * z + w * y),
            ],
            [
                2.0 * (x * y + w * z),
                1.0 - 2.0 * (x * x + z * z),
                2.0 * (y * z - w * x),
            ],
            [
                2.0 * (x * z - w * y),
                2.0 * (y * z + w * x),
                1.0 - 2.0 * (x * x + y * y),
            ],
        ]
    }

    fn matrix_axis_angle(m: [[f64; 3]; 3]) -> ([f64; 3], f64) {
        let tr = m[0][0] + m[1][1] + m[2][2];
        let angle = ((tr - 1.0) / 2.0).clamp(-1.0, 1.0).acos();
        let axis = [m[2][1] - m[1][2], m[0][2] - m[2][0], m[1][0] - m[0][1]];
        let n = norm3(&axis);
        ([axis[0] / n, axis[1] / n, axis[2] / n], angle)
    }

    fn arb_unit() -> impl Strategy<Value = UnitQuaternion> {
        prop::array::uniform4(-1.0f64..1.0)
            .prop_filter("non-degenerate", |a| norm4(a) > 0.1)
            .prop_map(|a| normalize(a).unwrap())
    }

    fn arb_vec3(r: f64) -> impl Strategy<Value = [f64; 3]> {
        prop::array::uniform3(-r..r)
    }

    #[test]
    fn log_of_identity_is_zero() {
        assert_eq!(quat_log(&UnitQuaternion::IDENTITY).v, [0.0, 0.0, 0.0]);
    }

    #[test]
    #[allow(clippy::approx_constant)]
    fn log_of_quarter_turn() {
        let q = normalize([FRAC_1_SQRT_2, 0.0, 0.0, FRAC_1_SQRT_2]).unwrap();
        let v = quat_log(&q).v;
        assert_abs_diff_eq!(v[2], FRAC_PI_4, epsilon = 1e-12);
        assert_abs_diff_eq!(v[2], 0.785398, epsilon = 1e-6);
        assert_eq!(v[0], 0.0);
        assert_eq!(v[1], 0.0);
    }

    #[test]
    fn exp_closed_forms() {
        assert_eq!(quat_exp(&LogQuaternion::new([0.0; 3])).to_array(), [1.0, 0.0, 0.0, 0.0]);
        let q = quat_exp(&LogQuaternion::new([0.0, 0.0, FRAC_PI_4])).to_array();
        assert_abs_diff_eq!(q[0], FRAC_1_SQRT_2, epsilon = 1e-15);
        assert_abs_diff_eq!(q[3], FRAC_1_SQRT_2, epsilon = 1e-15);
    }

    #[test]
    fn normalize_examples() {
        assert_eq!(
            normalize([2.0, 0.0, 0.0, 0.0]).unwrap().to_array(),
            [1.0, 0.0, 0.0, 0.0]
        );
        assert_eq!(
            normalize([1.0, 0.0, 0.0, 0.0]).unwrap().to_array(),
            [1.0, 0.0, 0.0, 0.0]
        );
        assert_eq!(normalize([1.0, 1.0, 1.0, 1.0]).unwrap().to_array(), [0.5; 4]);
        assert!(matches!(
            normalize([0.0, 1e-13, 0.0, 0.0]),
            Err(QuatError::NearZeroQuaternion { .. })
        ));
        assert!(normalize([f64::NAN, 0.0, 0.0, 0.0]).is_err());
        assert!(normalize([-1.0, 0.0, 0.0, 0.0]).unwrap().w() > 0.0);
    }

    #[test]
    fn tangent_project_examples() {
        let q = normalize([0.3, -0.2, 0.5, 0.1]).unwrap();
        let v = tangent_project(&q, q.to_array());
        assert!(v.norm() < 1e-15);
        let v = tangent_project(&UnitQuaternion::IDENTITY, [0.0, 1.0, 0.0, 0.0]);
        assert_eq!(v.v, [0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn literal_projection_scales_the_gradient() {
        let g = [0.1, 0.2, -0.3, 0.4];
        let v = literal_projection(g);
        let k = 1.0 - 0.3;
        for i in 0..4 {
            assert_abs_diff_eq!(v[i], g[i] * k, epsilon = 1e-15);
        }
    }

    #[test]
    fn geodesic_step_examples() {
        let q = normalize([0.9, 0.1, -0.2, 0.3]).unwrap();
        let same = geodesic_step(&q, &TangentVector { v: [0.0; 4] }, 0.5);
        for (a, b) in same.to_array().iter().zip(q.to_array()) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-15);
        }
        let r = geodesic_step(
            &UnitQuaternion::IDENTITY,
            &TangentVector {
                v: [0.0, FRAC_PI_2, 0.0, 0.0],
            },
            1.0,
        )
        .to_array();
        assert_abs_diff_eq!(r[0], 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(r[1], 1.0, epsilon = 1e-15);
    }

    #[test]
    fn rotation_error_examples() {
        let q = normalize([0.4, 0.1, -0.7, 0.2]).unwrap();
        assert_eq!(rotation_error_deg(&q, &q), 0.0);
        assert_eq!(rotation_error_deg(&q, &q.negated()), 0.0);
        let z90 = UnitQuaternion::from_axis_angle([0.0, 0.0, 1.0], FRAC_PI_2).unwrap();
        assert_abs_diff_eq!(
            rotation_error_deg(&UnitQuaternion::IDENTITY, &z90),
            90.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn translation_error_examples() {
        let a = Translation([0.0, 0.0, 0.0]);
        assert_eq!(translation_error(&a, &a), 0.0);
        assert_eq!(translation_error(&a, &Translation([3.0, 4.0, 0.0])), 5.0);
    }

    #[test]
    fn rotate_matches_matrix() {
        let q = normalize([0.3, 0.5, -0.4, 0.7]).unwrap();
        let m = to_matrix(q.to_array());
        let v = [0.2, -1.3, 2.5];
        let r = q.rotate(v);
        for i in 0..3 {
            let e = m[i][0] * v[0] + m[i][1] * v[1] + m[i][2] * v[2];
            assert_abs_diff_eq!(r[i], e, epsilon = 1e-12);
        }
    }

    #[test]
    fn pose_vector_roundtrip() {
        let q = normalize([0.9, 0.1, 0.2, -0.3]).unwrap();
        let p = Pose::new(Rotation::Quat(q), Translation([1.0, -2.0, 0.5]));
        let v = p.to_vector();
        assert_eq!(v.len(), 7);
        let back = Pose::from_vector(RotationMode::Quaternion, &v).unwrap();
        for (a, b) in back.to_vector().iter().zip(&v) {
            assert_abs_diff_eq!(*a, *b, epsilon = 1e-15);
        }
        let l = p.to_mode(RotationMode::LogQuaternion);
        assert_eq!(l.to_vector().len(), 6);
        assert!(rotation_error_deg(&l.unit_quaternion(), &q) < 1e-9);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(512))]

        #[test]
        fn log_matches_rotation_matrix_oracle(q in arb_unit()) {
            let v = quat_log(&q).v;
            let (axis, angle) = matrix_axis_angle(to_matrix(q.to_array()));
            prop_assume!(angle > 1e-6 && angle < std::f64::consts::PI - 1e-6);
            for i in 0..3 {
                prop_assert!((v[i] - axis[i] * angle / 2.0).abs() < 1e-9);
            }
        }

        #[test]
        fn exp_log_roundtrip(q in arb_unit()) {
            let back = quat_exp(&quat_log(&q)).to_array();
            let qa = q.to_array();
            let same = (0..4).all(|i| (back[i] - qa[i]).abs() < 1e-9);
            let flipped = (0..4).all(|i| (back[i] + qa[i]).abs() < 1e-9);
            prop_assert!(same || flipped);
        }

        #[test]
        fn log_exp_roundtrip(v in arb_vec3(2.0)) {
            let lv = LogQuaternion::new(v);
            prop_assume!(lv.norm() <= std::f64::consts::PI - 1e-6);
            let back = quat_log(&quat_exp(&lv)).v;
            for i in 0..3 {
                prop_assert!((back[i] - v[i]).abs() < 1e-9);
            }
        }

        #[test]
        fn tangent_project_is_orthogonal(q in arb_unit(), g in prop::array::uniform4(-10.0f64..10.0)) {
            let v = tangent_project(&q, g);
            prop_assert!(dot4(&v.v, &q.to_array()).abs() < 1e-9);
            let along = dot4(&g, &q.to_array());
            let qa = q.to_array();
            for i in 0..4 {
                prop_assert!((v.v[i] - (g[i] - along * qa[i])).abs() < 1e-12);
            }
        }

        #[test]
        fn geodesic_step_stays_on_sphere(
            q in arb_unit(),
            g in prop::array::uniform4(-5.0f64..5.0),
            l in 1e-5f64..1.0,
        ) {
            let v = tangent_project(&q, g);
            let mut cur = q;
            for _ in 0..50 {
                cur = geodesic_step(&cur, &tangent_project(&cur, v.v), l);
                prop_assert!((cur.norm() - 1.0).abs() < 1e-9);
            }
        }

        #[test]
        fn geodesic_step_first_order(q in arb_unit(), g in prop::array::uniform4(-1.0f64..1.0)) {
            let v = tangent_project(&q, g);
            let l = 1e-4;
            let step = geodesic_step(&q, &v, l).to_array();
            let qa = q.to_array();
            let taylor = normalize_raw([
                qa[0] + v.v[0] * l, qa[1] + v.v[1] * l, qa[2] + v.v[2] * l, qa[3] + v.v[3] * l,
            ]);
            for i in 0..4 {
                prop_assert!((step[i] - taylor[i]).abs() < 1e-7);
            }
        }

        #[test]
        fn rotation_error_matches_arccos_form(a in arb_unit(), b in arb_unit()) {
            let d = dot4(&a.to_array(), &b.to_array()).abs().min(1.0);
            let reference = (2.0 * d.acos()).to_degrees();
            prop_assert!((rotation_error_deg(&a, &b) - reference).abs() < 1e-6);
        }

        #[test]
        fn rotation_error_sign_invariant(a in arb_unit(), b in arb_unit()) {
            prop_assert_eq!(rotation_error_deg(&a, &b), rotation_error_deg(&a.negated(), &b));
            prop_assert_eq!(rotation_error_deg(&a, &b), rotation_error_deg(&b, &a));
        }

        #[test]
        fn rotation_error_triangle(a in arb_unit(), b in arb_unit(), c in arb_unit()) {
            let ab = rotation_error_deg(&a, &b);
            let bc = rotation_error_deg(&b, &c);
            let ac = rotation_error_deg(&a, &c);
            prop_assert!(ac <= ab + bc + 1e-6);
        }

        #[test]
        fn translation_error_matches_componentwise(a in arb_vec3(10.0), b in arb_vec3(10.0)) {
            let e = ((a[0]-b[0]).powi(2) + (a[1]-b[1]).powi(2) + (a[2]-b[2]).powi(2)).sqrt();
            prop_assert!((translation_error(&Translation(a), &Translation(b)) - e).abs() < 1e-12);
        }
    }

    fn normalize_raw(a: [f64; 4]) -> [f64; 4] {
        let n = norm4(&a);
        [a[0] / n, a[1] / n, a[2] / n, a[3] / n]
    }
}
