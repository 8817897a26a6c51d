//! Versioned little-endian binary container shared by checkpoints and
//! datasets: `magic (8 bytes) | u32 version | body | SHA-256 of everything before`.

use sha2::{Digest, Sha256};
use thiserror::Error;

const CHECKSUM_LEN: usize = 32;
const PREAMBLE_LEN: usize = 12;

#[derive(Debug, Error)]
pub enum ContainerError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a {expected} file (bad magic bytes)")]
    BadMagic { expected: &'static str },
    #[error("format version mismatch: file has version {found}, this build reads version {supported}")]
    FormatVersionMismatch { found: u32, supported: u32 },
    #[error("checksum mismatch: file is truncated or corrupted")]
    ChecksumMismatch,
    #[error("malformed {what}: {detail}")]
    Malformed { what: &'static str, detail: String },
}

pub(crate) struct Encoder {
    buf: Vec<u8>,
}

impl Encoder {
    pub fn new(magic: &[u8; 8], version: u32) -> Self {
        let mut buf = Vec::with_capacity(1 << 16);
        buf.extend_from_slice(magic);
        buf.extend_from_slice(&version.to_le_bytes());
        Encoder { buf }
    }

    pub fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    pub fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn f64s(&mut self, vs: &[f64]) {
        for v in vs {
            self.f64(*v);
        }
    }

    /// Length-prefixed (u32) UTF-8 string.
    pub fn str(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.buf.extend_from_slice(s.as_bytes());
    }

    pub fn finish(mut self) -> Vec<u8> {
        let digest = Sha256::digest(&self.buf);
        self.buf.extend_from_slice(digest.as_slice());
        self.buf
    }
}

pub(crate) struct Decoder<'a> {
    what: &'static str,
    buf: &'a [u8],
    pos: usize,
}

/// Validates magic, version and checksum, returning a decoder over the body.
pub(crate) fn open<'a>(
    bytes: &'a [u8],
    magic: &[u8; 8],
    supported: u32,
    what: &'static str,
) -> Result<Decoder<'a>, ContainerError> {
    if bytes.len() < PREAMBLE_LEN + CHECKSUM_LEN {
        if bytes.len() >= 8 && &bytes[..8] != magic {
            return Err(ContainerError::BadMagic { expected: what });
        }
        return Err(ContainerError::ChecksumMismatch);
    }
    if &bytes[..8] != magic {
        return Err(ContainerError::BadMagic { expected: what });
    }
    let found = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if found != supported {
        return Err(ContainerError::FormatVersionMismatch { found, supported });
    }
    let split = bytes.len() - CHECKSUM_LEN;
    let digest = Sha256::digest(&bytes[..split]);
    if digest.as_slice() != &bytes[split..] {
        return Err(ContainerError::ChecksumMismatch);
    }
    Ok(Decoder {
        what,
        buf: &bytes[..split],
        pos: PREAMBLE_LEN,
    })
}

impl<'a> Decoder<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ContainerError> {
        if self.pos + n > self.buf.len() {
            return Err(self.malformed(format!("unexpected end of body at byte {}", self.pos)));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn malformed(&self, detail: String) -> ContainerError {
        ContainerError::Malformed {
            what: self.what,
            detail,
        }
    }

    pub fn u8(&mut self) -> Result<u8, ContainerError> {
        Ok(self.take(1)?[0])
    }

    pub fn u32(&mut self) -> Result<u32, ContainerError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    pub fn u64(&mut self) -> Result<u64, ContainerError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    pub fn f64s(&mut self, n: usize) -> Result<Vec<f64>, ContainerError> {
        let raw = self.take(
            n.checked_mul(8)
                .ok_or_else(|| self.malformed("length overflow".into()))?,
        )?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }

    pub fn str(&mut self) -> Result<String, ContainerError> {
        let n = self.u32()? as usize;
        let raw = self.take(n)?;
        String::from_utf8(raw.to_vec()).map_err(|e| self.malformed(format!("invalid utf-8: {e}")))
    }

    pub fn finish(self) -> Result<(), ContainerError> {
        if self.pos != self.buf.len() {
            return Err(self.malformed(format!("{} trailing bytes", self.buf.len() - self.pos)));
        }
        Ok(())
    }
}
