//! Checkpoint container.
//!
//! ```text
//! magic      8 bytes   "ADVPCKPT"
//! version    u32       1
//! mode       u8        0 = quaternion, 1 = log-quaternion
//! meta       u32 len + UTF-8 JSON (free-form run metadata, may be "{}")
//! count      u32       number of tensors N
//! N headers  u32 name len + UTF-8 name, u32 rank, rank × u64 dims
//! N payloads product(dims) × f64, in header order
//! checksum   32 bytes  SHA-256 of every preceding byte
//! ```
//!
//! All integers and floats are little-endian.

use std::collections::BTreeMap;
use std::path::Path;

use crate::container::{self, ContainerError, Encoder};
use crate::quat::RotationMode;

use super::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"ADVPCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub mode: RotationMode,
    pub meta: String,
    pub tensors: BTreeMap<String, Tensor>,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        self.encode(CHECKPOINT_VERSION)
    }

    pub(crate) fn encode(&self, version: u32) -> Vec<u8> {
        let mut enc = Encoder::new(CHECKPOINT_MAGIC, version);
        enc.u8(self.mode.code());
        enc.str(&self.meta);
        enc.u32(self.tensors.len() as u32);
        for (name, t) in &self.tensors {
            enc.str(name);
            enc.u32(t.rank() as u32);
            for d in t.shape() {
                enc.u64(*d as u64);
            }
        }
        for t in self.tensors.values() {
            enc.f64s(t.data());
        }
        enc.finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ContainerError> {
        let mut dec = container::open(bytes, CHECKPOINT_MAGIC, CHECKPOINT_VERSION, "checkpoint")?;
        let code = dec.u8()?;
        let mode = RotationMode::from_code(code).ok_or_else(|| dec.malformed(format!("unknown mode code {code}")))?;
        let meta = dec.str()?;
        let count = dec.u32()? as usize;
        let mut headers = Vec::with_capacity(count);
        for _ in 0..count {
            let name = dec.str()?;
            let rank = dec.u32()? as usize;
            let shape = (0..rank)
                .map(|_| dec.u64().map(|d| d as usize))
                .collect::<Result<Vec<_>, _>>()?;
            headers.push((name, shape));
        }
        let mut tensors = BTreeMap::new();
        for (name, shape) in headers {
            let n: usize = shape.iter().product();
            let data = dec.f64s(n)?;
            let t = Tensor::new(shape, data).map_err(|e| dec.malformed(e.to_string()))?;
            if tensors.insert(name.clone(), t).is_some() {
                return Err(dec.malformed(format!("duplicate tensor `{name}`")));
            }
        }
        dec.finish()?;
        Ok(Checkpoint { mode, meta, tensors })
    }

    pub fn save(&self, path: &Path) -> Result<(), ContainerError> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ContainerError> {
        let bytes = std::fs::read(path)?;
        Self::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        let mut tensors = BTreeMap::new();
        tensors.insert(
            "a.w".to_string(),
            Tensor::matrix(2, 3, vec![1.0, -2.0, 3.5, 0.0, 1e-300, -0.0]).unwrap(),
        );
        tensors.insert("beta".to_string(), Tensor::scalar(-3.0));
        Checkpoint {
            mode: RotationMode::LogQuaternion,
            meta: r#"{"epoch":3}"#.into(),
            tensors,
        }
    }

    #[test]
    fn roundtrip_is_lossless() {
        let c = sample();
        let back = Checkpoint::from_bytes(&c.to_bytes()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.tensors["a.w"].data()[5].to_bits(), (-0.0f64).to_bits());
    }

    #[test]
    fn layout_is_little_endian() {
        let bytes = sample().to_bytes();
        assert_eq!(&bytes[..8], b"ADVPCKPT");
        assert_eq!(&bytes[8..12], &1u32.to_le_bytes());
        assert_eq!(bytes[12], 1);
        // Payload of the last tensor ("beta" sorts after "a.w") precedes the checksum.
        let n = bytes.len();
        assert_eq!(&bytes[n - 40..n - 32], &(-3.0f64).to_le_bytes());
    }

    #[test]
    fn truncation_is_detected() {
        let bytes = sample().to_bytes();
        for cut in [1, 10, bytes.len() / 2, bytes.len() - 13] {
            let err = Checkpoint::from_bytes(&bytes[..bytes.len() - cut]).unwrap_err();
            assert!(matches!(err, ContainerError::ChecksumMismatch), "{err}");
        }
    }

    #[test]
    fn newer_version_is_rejected() {
        let err = Checkpoint::from_bytes(&sample().encode(7)).unwrap_err();
        match err {
            ContainerError::FormatVersionMismatch { found, supported } => {
                assert_eq!((found, supported), (7, 1));
            }
            other => panic!("unexpected {other}"),
        }
    }
}
