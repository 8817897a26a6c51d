use std::collections::BTreeMap;

use rand::Rng;
use sha2::{Digest, Sha256};

use super::{DiffError, Tape, Tensor, Var};

/// Named trainable tensors, iterated in name order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    tensors: BTreeMap<String, Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts a tensor; a name can only be registered once.
    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) {
        let name = name.into();
        let prev = self.tensors.insert(name.clone(), value);
        assert!(prev.is_none(), "parameter `{name}` registered twice");
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.tensors.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.tensors.iter()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.tensors.keys()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn num_values(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    /// Weight matrix `[n_out, n_in]` drawn uniformly in `±sqrt(6 / (n_in + n_out))`.
    pub fn init_glorot<R: Rng>(&mut self, name: impl Into<String>, n_out: usize, n_in: usize, rng: &mut R) {
        let bound = (6.0 / (n_in + n_out) as f64).sqrt();
        let data = (0..n_out * n_in).map(|_| rng.random_range(-bound..bound)).collect();
        self.insert(name, Tensor::new(vec![n_out, n_in], data).expect("shape"));
    }

    pub fn init_zeros(&mut self, name: impl Into<String>, shape: &[usize]) {
        self.insert(name, Tensor::zeros(shape));
    }

    /// Records every tensor on `tape`, as differentiable parameters or as constants.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Result<BTreeMap<String, Var>, DiffError> {
        self.tensors
            .iter()
            .map(|(name, t)| {
                let v = if trainable {
                    tape.param(name, t)?
                } else {
                    tape.constant(t.clone())?
                };
                Ok((name.clone(), v))
            })
            .collect()
    }

    /// SHA-256 over names, shapes and value bits.
    pub fn checksum(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        for (name, t) in &self.tensors {
            h.update((name.len() as u64).to_le_bytes());
            h.update(name.as_bytes());
            for d in t.shape() {
                h.update((*d as u64).to_le_bytes());
            }
            for v in t.data() {
                h.update(v.to_bits().to_le_bytes());
            }
        }
        let mut out = [0u8; 32];
        out.copy_from_slice(h.finalize().as_slice());
        out
    }

    /// Bit-level equality of every tensor.
    pub fn bit_identical(&self, other: &ParamStore) -> bool {
        self.tensors.len() == other.tensors.len()
            && self.tensors.iter().zip(&other.tensors).all(|((na, a), (nb, b))| {
                na == nb
                    && a.shape() == b.shape()
                    && a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits())
            })
    }

    pub fn into_map(self) -> BTreeMap<String, Tensor> {
        self.tensors
    }

    pub fn from_map(tensors: BTreeMap<String, Tensor>) -> Self {
        ParamStore { tensors }
    }
}
