//! Checkpoint layout (all integers little-endian):
//!
//! ```text
//! magic        8 bytes   "ZSPADAE\0"
//! version      u32
//! flags        u32       bit 0 = trained
//! config_len   u32
//! config       config_len bytes of JSON
//! n_params     u64
//! params       n_params x f32, declaration order
//! ```
//!
//! Parameters are kept on the `f32` grid in memory, so the round trip is
//! lossless.

use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use super::{AEConfig, AutoencoderModel};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"ZSPADAE\0";
pub const CHECKPOINT_VERSION: u32 = 1;

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Corrupt(format!("checkpoint truncated while reading {what}")))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }
}

impl AutoencoderModel {
    pub fn to_bytes(&self) -> Vec<u8> {
        let config = serde_json::to_vec(&self.config).expect("config serialises");
        let mut out = Vec::with_capacity(32 + config.len() + 4 * self.params.len());
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&u32::from(self.trained).to_le_bytes());
        out.extend_from_slice(&(config.len() as u32).to_le_bytes());
        out.extend_from_slice(&config);
        out.extend_from_slice(&(self.params.len() as u64).to_le_bytes());
        for &p in &self.params {
            out.extend_from_slice(&(p as f32).to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let magic = r.take(CHECKPOINT_MAGIC.len(), "magic")?;
        if magic != CHECKPOINT_MAGIC {
            return Err(Error::Format("not an autoencoder checkpoint (bad magic)".into()));
        }
        let version = r.u32("version")?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::IncompatibleCheckpoint(format!(
                "checkpoint version {version}, this build reads version {CHECKPOINT_VERSION}"
            )));
        }
        let flags = r.u32("flags")?;
        let config_len = r.u32("config length")? as usize;
        let config: AEConfig = serde_json::from_slice(r.take(config_len, "config")?)
            .map_err(|e| Error::Corrupt(format!("checkpoint config: {e}")))?;
        let n = r.u64("parameter count")? as usize;
        let raw = r.take(n.checked_mul(4).unwrap_or(usize::MAX), "parameters")?;
        if r.pos != bytes.len() {
            return Err(Error::Corrupt(format!(
                "{} trailing bytes after parameters",
                bytes.len() - r.pos
            )));
        }
        let params = raw
            .chunks_exact(4)
            .map(|c| f64::from(f32::from_le_bytes(c.try_into().expect("4 bytes"))))
            .collect();
        AutoencoderModel::from_parts(config, params, flags & 1 == 1)
    }

    /// Hex SHA-256 of the serialised checkpoint.
    pub fn fingerprint(&self) -> String {
        hex::encode(Sha256::digest(self.to_bytes()))
    }
}

pub fn save_model(model: &AutoencoderModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, model.to_bytes()).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<AutoencoderModel> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    AutoencoderModel::from_bytes(&bytes)
}
