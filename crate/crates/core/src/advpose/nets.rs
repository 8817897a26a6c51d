use std::collections::BTreeMap;

use rand::Rng;

use super::AdvPoseError;
use crate::diff::{DiffError, ParamStore, Tape, Tensor, Var};
use crate::quat::RotationMode;

/// Parameters bound onto a tape, keyed by name.
pub type Bound = BTreeMap<String, Var>;

fn bound(p: &Bound, name: &str) -> Var {
    *p.get(name).unwrap_or_else(|| panic!("parameter `{name}` not bound"))
}

fn layer_names(prefix: &str, tag: &str) -> (String, String) {
    (format!("{prefix}.{tag}.w"), format!("{prefix}.{tag}.b"))
}

fn dense(tape: &mut Tape, p: &Bound, names: &(String, String), x: Var) -> Result<Var, DiffError> {
    let (w, b) = (bound(p, &names.0), bound(p, &names.1));
    tape.affine(x, w, Some(b))
}

fn count_layers(params: &ParamStore, prefix: &str) -> usize {
    (0..)
        .take_while(|i| params.get(&format!("{prefix}{i}.w")).is_some())
        .count()
}

fn weight_shape(params: &ParamStore, name: &str) -> Result<(usize, usize), AdvPoseError> {
    let t = params
        .get(name)
        .ok_or_else(|| AdvPoseError::InvalidParams(format!("missing `{name}`")))?;
    match t.shape() {
        [o, i] => Ok((*o, *i)),
        s => Err(AdvPoseError::InvalidParams(format!("`{name}` has shape {s:?}"))),
    }
}

/// Regressor outputs on a tape. In quaternion mode `rotation` is already
/// normalized and sign-canonical.
#[derive(Debug, Clone, Copy)]
pub struct RegOut {
    pub rotation: Var,
    pub translation: Var,
}

/// Dense ELU trunk with separate rotation and translation heads, plus the
/// two loss-balancing scalars `beta` and `alpha`.
#[derive(Debug, Clone, PartialEq)]
pub struct Regressor {
    mode: RotationMode,
    input_dim: usize,
    params: ParamStore,
    trunk: Vec<(String, String)>,
    head_q: (String, String),
    head_t: (String, String),
}

pub const BETA: &str = "reg.beta";
pub const ALPHA: &str = "reg.alpha";

impl Regressor {
    pub fn new<R: Rng>(
        mode: RotationMode,
        input_dim: usize,
        trunk: &[usize],
        beta0: f64,
        alpha0: f64,
        rng: &mut R,
    ) -> Self {
        let mut params = ParamStore::new();
        let mut width = input_dim;
        for (i, &h) in trunk.iter().enumerate() {
            params.init_glorot(format!("reg.trunk{i}.w"), h, width, rng);
            params.init_zeros(format!("reg.trunk{i}.b"), &[h]);
            width = h;
        }
        let r = mode.rotation_dim();
        params.init_glorot("reg.head_q.w", r, width, rng);
        let mut bq = vec![0.0; r];
        if mode == RotationMode::Quaternion {
            // Start near the identity rotation.
            bq[0] = 1.0;
        }
        params.insert("reg.head_q.b", Tensor::vector(bq));
        params.init_glorot("reg.head_t.w", 3, width, rng);
        params.init_zeros("reg.head_t.b", &[3]);
        params.insert(BETA, Tensor::scalar(beta0));
        params.insert(ALPHA, Tensor::scalar(alpha0));
        Self::from_params(mode, params).expect("fresh regressor is well formed")
    }

    /// Rebuilds a regressor from stored tensors, checking that the layer
    /// shapes chain and the rotation head matches `mode`.
    pub fn from_params(mode: RotationMode, params: ParamStore) -> Result<Self, AdvPoseError> {
        let n = count_layers(&params, "reg.trunk");
        let mut trunk = Vec::with_capacity(n);
        let mut input_dim = None;
        let mut width = 0;
        for i in 0..n {
            let names = layer_names("reg", &format!("trunk{i}"));
            let (o, inp) = weight_shape(&params, &names.0)?;
            if input_dim.is_some() {
                if inp != width {
                    return Err(AdvPoseError::InvalidParams(format!(
                        "trunk layer {i} expects {inp} inputs, previous layer has {width}"
                    )));
                }
            } else {
                input_dim = Some(inp);
            }
            width = o;
            trunk.push(names);
        }
        let head_q = layer_names("reg", "head_q");
        let head_t = layer_names("reg", "head_t");
        let (qo, qi) = weight_shape(&params, &head_q.0)?;
        let (to, ti) = weight_shape(&params, &head_t.0)?;
        let input_dim = input_dim.unwrap_or(qi);
        if n == 0 {
            width = qi;
        }
        if qo != mode.rotation_dim() {
            return Err(AdvPoseError::ModeMismatch {
                expected: mode,
                found: if qo == 4 {
                    RotationMode::Quaternion
                } else {
                    RotationMode::LogQuaternion
                },
            });
        }
        if qi != width || ti != width || to != 3 {
            return Err(AdvPoseError::InvalidParams(
                "regressor heads do not match the trunk".into(),
            ));
        }
        for name in [BETA, ALPHA] {
            match params.get(name) {
                Some(t) if t.len() == 1 && t.all_finite() => {}
                _ => return Err(AdvPoseError::InvalidParams(format!("`{name}` must be a finite scalar"))),
            }
        }
        Ok(Regressor {
            mode,
            input_dim,
            params,
            trunk,
            head_q,
            head_t,
        })
    }

    pub fn mode(&self) -> RotationMode {
        self.mode
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn trunk_widths(&self) -> Vec<usize> {
        self.trunk
            .iter()
            .map(|n| self.params.get(&n.0).expect("weight").shape()[0])
            .collect()
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn beta(&self) -> f64 {
        self.params.get(BETA).expect("beta").item()
    }

    pub fn alpha(&self) -> f64 {
        self.params.get(ALPHA).expect("alpha").item()
    }

    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Result<Bound, DiffError> {
        self.params.bind(tape, trainable)
    }

    pub fn forward(&self, tape: &mut Tape, p: &Bound, observation: &[f64]) -> Result<RegOut, AdvPoseError> {
        if observation.len() != self.input_dim {
            return Err(AdvPoseError::ShapeMismatch {
                expected: self.input_dim,
                got: observation.len(),
            });
        }
        let mut h = tape.constant(Tensor::vector(observation.to_vec()))?;
        for names in &self.trunk {
            let z = dense(tape, p, names, h)?;
            h = tape.elu(z)?;
        }
        let raw = dense(tape, p, &self.head_q, h)?;
        let translation = dense(tape, p, &self.head_t, h)?;
        let rotation = match self.mode {
            RotationMode::LogQuaternion => raw,
            RotationMode::Quaternion => {
                let v = tape.value(raw).data();
                let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                if n.is_nan() || n <= crate::quat::MIN_QUATERNION_NORM {
                    return Err(crate::quat::QuatError::NearZeroQuaternion { norm: n }.into());
                }
                let flip = v[0] < 0.0;
                let q = tape.normalize(raw)?;
                if flip {
                    tape.scale(q, -1.0)?
                } else {
                    q
                }
            }
        };
        Ok(RegOut { rotation, translation })
    }
}

/// Dense ELU stack ending in a width-1 sigmoid. Scores `(features, pose)`
/// pairs; the pose is tiled to the feature width before concatenation. With
/// `use_features` off the input is the bare pose vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Discriminator {
    mode: RotationMode,
    feature_dim: usize,
    use_features: bool,
    params: ParamStore,
    layers: Vec<(String, String)>,
}

pub const DISC_HIDDEN: [usize; 2] = [32, 16];

impl Discriminator {
    pub fn new<R: Rng>(
        mode: RotationMode,
        feature_dim: usize,
        hidden: &[usize],
        use_features: bool,
        rng: &mut R,
    ) -> Self {
        let mut params = ParamStore::new();
        let mut width = Self::input_width(mode, feature_dim, use_features);
        for (i, &h) in hidden.iter().chain(std::iter::once(&1)).enumerate() {
            params.init_glorot(format!("disc.l{i}.w"), h, width, rng);
            params.init_zeros(format!("disc.l{i}.b"), &[h]);
            width = h;
        }
        Self::from_params(mode, feature_dim, use_features, params).expect("fresh discriminator is well formed")
    }

    fn input_width(mode: RotationMode, feature_dim: usize, use_features: bool) -> usize {
        if use_features {
            2 * feature_dim
        } else {
            mode.pose_dim()
        }
    }

    pub fn from_params(
        mode: RotationMode,
        feature_dim: usize,
        use_features: bool,
        params: ParamStore,
    ) -> Result<Self, AdvPoseError> {
        if use_features && feature_dim < mode.pose_dim() {
            return Err(AdvPoseError::InvalidParams(format!(
                "feature width {feature_dim} is smaller than the pose vector ({})",
                mode.pose_dim()
            )));
        }
        let n = count_layers(&params, "disc.l");
        if n == 0 {
            return Err(AdvPoseError::InvalidParams("discriminator has no layers".into()));
        }
        let mut width = Self::input_width(mode, feature_dim, use_features);
        let mut layers = Vec::with_capacity(n);
        for i in 0..n {
            let names = layer_names("disc", &format!("l{i}"));
            let (o, inp) = weight_shape(&params, &names.0)?;
            if inp != width {
                return Err(AdvPoseError::InvalidParams(format!(
                    "discriminator layer {i} expects {inp} inputs, got {width}"
                )));
            }
            width = o;
            layers.push(names);
        }
        if width != 1 {
            return Err(AdvPoseError::InvalidParams(
                "discriminator must end in a single output".into(),
            ));
        }
        Ok(Discriminator {
            mode,
            feature_dim,
            use_features,
            params,
            layers,
        })
    }

    pub fn mode(&self) -> RotationMode {
        self.mode
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn use_features(&self) -> bool {
        self.use_features
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    /// Zeroes the output layer so the network returns exactly 0.5 everywhere.
    pub fn zero_output_layer(&mut self) {
        let (w, b) = self.layers.last().expect("output layer").clone();
        for name in [w, b] {
            self.params.get_mut(&name).expect("output").data_mut().fill(0.0);
        }
    }

    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Result<Bound, DiffError> {
        self.params.bind(tape, trainable)
    }

    /// Probability that `pose` (a full pose vector on the tape) is real.
    pub fn forward(&self, tape: &mut Tape, p: &Bound, features: &[f64], pose: Var) -> Result<Var, AdvPoseError> {
        let k = tape.value(pose).len();
        if k != self.mode.pose_dim() {
            return Err(AdvPoseError::ShapeMismatch {
                expected: self.mode.pose_dim(),
                got: k,
            });
        }
        let mut h = if self.use_features {
            if features.len() != self.feature_dim {
                return Err(AdvPoseError::ShapeMismatch {
                    expected: self.feature_dim,
                    got: features.len(),
                });
            }
            let f = tape.constant(Tensor::vector(features.to_vec()))?;
            let tiled = tape.tile(pose, self.feature_dim)?;
            tape.concat(f, tiled)?
        } else {
            pose
        };
        let last = self.layers.len() - 1;
        for (i, names) in self.layers.iter().enumerate() {
            let z = dense(tape, p, names, h)?;
            h = if i == last { tape.sigmoid(z)? } else { tape.elu(z)? };
        }
        Ok(h)
    }
}
