//! `TVCF` tensor container.
//!
//! Layout, all integers little-endian:
//!
//! | field     | type              |
//! |-----------|-------------------|
//! | magic     | `b"TVCF"`         |
//! | version   | `u32` (1)         |
//! | dtype     | `u32` (0 = f32 LE)|
//! | n_dims    | `u32`             |
//! | dims      | `n_dims × u64`    |
//! | payload   | row-major values  |
//!
//! Feature files carry a JSON sidecar at `<path>.json` describing how they were
//! extracted.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{FeatureConfig, MelRole};
use crate::error::{Error, Result};
use crate::io::write_atomic;

pub const MAGIC: &[u8; 4] = b"TVCF";
pub const VERSION: u32 = 1;
pub const DTYPE_F32_LE: u32 = 0;

/// A dense f32 tensor as stored on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorData {
    pub dims: Vec<usize>,
    pub values: Vec<f32>,
}

impl TensorData {
    pub fn new(dims: Vec<usize>, values: Vec<f32>) -> Result<Self> {
        let n: usize = dims.iter().product();
        if n != values.len() {
            return Err(Error::Shape(format!(
                "dims {dims:?} need {n} values, got {}",
                values.len()
            )));
        }
        Ok(Self { dims, values })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + 8 * self.dims.len() + 4 * self.values.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&DTYPE_F32_LE.to_le_bytes());
        out.extend_from_slice(&(self.dims.len() as u32).to_le_bytes());
        for &d in &self.dims {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    /// Parses one tensor and returns it with the number of bytes consumed.
    pub fn from_bytes(bytes: &[u8]) -> Result<(Self, usize)> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Format("bad TVCF magic".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported TVCF version {version}")));
        }
        let dtype = r.u32()?;
        if dtype != DTYPE_F32_LE {
            return Err(Error::Format(format!("unsupported TVCF dtype {dtype}")));
        }
        let n_dims = r.u32()? as usize;
        let dims = (0..n_dims)
            .map(|_| r.u64().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let n: usize = dims.iter().product();
        let payload = r.take(n * 4)?;
        let values = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Ok((Self { dims, values }, r.pos))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::MissingFeature(path.to_path_buf()),
            _ => e.into(),
        })?;
        let (t, used) = Self::from_bytes(&bytes)?;
        if used != bytes.len() {
            return Err(Error::Format(format!(
                "{}: {} trailing bytes",
                path.display(),
                bytes.len() - used
            )));
        }
        Ok(t)
    }
}

pub(crate) struct Reader<'a> {
    pub bytes: &'a [u8],
    pub pos: usize,
}

impl<'a> Reader<'a> {
    pub fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Format("unexpected end of data".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    pub fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    pub fn u64(&mut self) -> Result<u64> {
        let b = self.take(8)?;
        let mut a = [0u8; 8];
        a.copy_from_slice(b);
        Ok(u64::from_le_bytes(a))
    }
}

/// Extraction record stored next to each feature file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    /// `"mel"`, `"linear"` or `"ppg"`.
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub role: Option<MelRole>,
    pub feature_hash: String,
    pub features: FeatureConfig,
    /// Checkpoint ids of the networks that produced this file, if any.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub provenance: Vec<String>,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

impl Sidecar {
    pub fn write(&self, feature_path: &Path) -> Result<()> {
        write_atomic(&sidecar_path(feature_path), &serde_json::to_vec_pretty(self)?)
    }

    pub fn read(feature_path: &Path) -> Result<Self> {
        let p = sidecar_path(feature_path);
        let bytes = std::fs::read(&p).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::MissingFeature(p.clone()),
            _ => e.into(),
        })?;
        Ok(serde_json::from_slice(&bytes)?)
    }
}
