//! Content hashing and seed derivation. All hashes are SHA-256 over
//! length-prefixed fields so they are stable across runs and platforms.

use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Incremental hasher over length-prefixed fields, so that ("ab","c") and
/// ("a","bc") hash differently.
#[derive(Clone, Default)]
pub struct FieldHasher(Sha256);

impl FieldHasher {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn bytes(mut self, b: &[u8]) -> Self {
        self.0.update((b.len() as u64).to_le_bytes());
        self.0.update(b);
        self
    }

    pub fn str(self, s: &str) -> Self {
        self.bytes(s.as_bytes())
    }

    pub fn u64(self, v: u64) -> Self {
        self.bytes(&v.to_le_bytes())
    }

    pub fn f64(self, v: f64) -> Self {
        self.u64(v.to_bits())
    }

    pub fn finish(self) -> [u8; 32] {
        self.0.finalize().into()
    }

    pub fn finish_hex(self) -> String {
        hex::encode(self.finish())
    }

    pub fn finish_u64(self) -> u64 {
        let d = self.finish();
        u64::from_le_bytes(d[..8].try_into().expect("digest is 32 bytes"))
    }
}

pub fn sha256_hex(data: &[u8]) -> String {
    hex::encode(Sha256::digest(data))
}

pub fn file_sha256(path: impl AsRef<Path>) -> Result<String> {
    let path = path.as_ref();
    let data = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(sha256_hex(&data))
}

/// Derives an independent sub-seed for a named unit of work (a query, a
/// stage) from the global seed.
pub fn derive_seed(seed: u64, label: &str) -> u64 {
    FieldHasher::new().u64(seed).str(label).finish_u64()
}
