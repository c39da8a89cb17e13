//! Versioned weight container shared by all four networks.
//!
//! Layout (little-endian): magic `b"TVCK"`, `u32` version, `u32` header length,
//! JSON header, `u32` tensor count, then per tensor a `u32` name length, the
//! UTF-8 name and one TVCF tensor record.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::features::tvcf::{Reader, TensorData};
use crate::features::FeatureConfig;
use crate::io::write_atomic;
use crate::nn::ParamStore;

pub const MAGIC: &[u8; 4] = b"TVCK";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NetworkKind {
    Recognizer,
    Synthesizer,
    Enhancer,
    Vocoder,
}

impl NetworkKind {
    /// Default file name inside a checkpoint directory.
    pub fn file_name(self) -> &'static str {
        match self {
            NetworkKind::Recognizer => "pr.ckpt",
            NetworkKind::Synthesizer => "syn.ckpt",
            NetworkKind::Enhancer => "se.ckpt",
            NetworkKind::Vocoder => "vocoder.ckpt",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub kind: NetworkKind,
    pub feature_hash: String,
    pub features: FeatureConfig,
    /// Optimizer steps taken so far; training schedules resume from here.
    pub step: usize,
    /// Network configuration as JSON.
    pub config: serde_json::Value,
    /// Ids of checkpoints this one was derived from.
    #[serde(default)]
    pub parents: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub tensors: Vec<(String, TensorData)>,
}

impl Checkpoint {
    pub fn from_store(header: CheckpointHeader, store: &ParamStore) -> Result<Self> {
        Ok(Self {
            header,
            tensors: store.snapshot()?,
        })
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = serde_json::to_vec(&self.header)?;
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in &self.tensors {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&t.to_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Format("not a checkpoint (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        let hlen = r.u32()? as usize;
        let header: CheckpointHeader = serde_json::from_slice(r.take(hlen)?)?;
        let n = r.u32()? as usize;
        let mut tensors = Vec::with_capacity(n);
        for _ in 0..n {
            let len = r.u32()? as usize;
            let name = String::from_utf8(r.take(len)?.to_vec())
                .map_err(|_| Error::Format("tensor name is not UTF-8".into()))?;
            let (t, used) = TensorData::from_bytes(&r.bytes[r.pos..])?;
            r.pos += used;
            tensors.push((name, t));
        }
        if r.pos != bytes.len() {
            return Err(Error::Format("trailing bytes after checkpoint".into()));
        }
        Ok(Self { header, tensors })
    }

    /// Content id: leading hex digits of the SHA-256 of the serialized bytes.
    pub fn id(&self) -> Result<String> {
        Ok(hex::encode(&Sha256::digest(self.to_bytes()?)[..8]))
    }

    /// Atomic write; returns the checkpoint id.
    pub fn save(&self, path: &Path) -> Result<String> {
        let bytes = self.to_bytes()?;
        write_atomic(path, &bytes)?;
        Ok(hex::encode(&Sha256::digest(&bytes)[..8]))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::MissingCheckpoint(path.to_path_buf()),
            _ => e.into(),
        })?;
        Self::from_bytes(&bytes)
    }

    pub fn expect_kind(&self, kind: NetworkKind) -> Result<()> {
        if self.header.kind != kind {
            return Err(Error::ConfigMismatch(format!(
                "expected a {kind:?} checkpoint, found {:?}",
                self.header.kind
            )));
        }
        Ok(())
    }
}

/// Id of the checkpoint file at `path`.
pub fn checkpoint_id(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingCheckpoint(path.to_path_buf()),
        _ => e.into(),
    })?;
    Ok(hex::encode(&Sha256::digest(&bytes)[..8]))
}

/// The four checkpoint files of one pipeline, stored under one directory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CheckpointSet {
    pub dir: PathBuf,
}

impl CheckpointSet {
    pub const KINDS: [NetworkKind; 4] = [
        NetworkKind::Recognizer,
        NetworkKind::Synthesizer,
        NetworkKind::Enhancer,
        NetworkKind::Vocoder,
    ];

    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    pub fn path(&self, kind: NetworkKind) -> PathBuf {
        self.dir.join(kind.file_name())
    }

    /// Loads one checkpoint and checks its kind.
    pub fn load(&self, kind: NetworkKind) -> Result<Checkpoint> {
        let ck = Checkpoint::load(&self.path(kind))?;
        ck.expect_kind(kind)?;
        Ok(ck)
    }

    pub fn id(&self, kind: NetworkKind) -> Result<String> {
        checkpoint_id(&self.path(kind))
    }

    /// Fails with `MissingCheckpoint` on the first absent file.
    pub fn require(&self, kinds: &[NetworkKind]) -> Result<()> {
        for &k in kinds {
            let p = self.path(k);
            if !p.is_file() {
                return Err(Error::MissingCheckpoint(p));
            }
        }
        Ok(())
    }
}

/// Fails with `ConfigMismatch` unless all checkpoints share one feature recipe.
pub fn require_same_features(cks: &[&Checkpoint]) -> Result<()> {
    if let Some(first) = cks.first() {
        for ck in &cks[1..] {
            if ck.header.feature_hash != first.header.feature_hash {
                return Err(Error::ConfigMismatch(format!(
                    "{:?} checkpoint uses feature recipe {}, {:?} uses {}",
                    first.header.kind, first.header.feature_hash, ck.header.kind, ck.header.feature_hash
                )));
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Init;

    fn sample() -> Checkpoint {
        let store = ParamStore::new(4);
        store.root().pp("a").param("w", &[2, 3], Init::Uniform(0.5)).unwrap();
        store.root().pp("b").param("bias", &[3], Init::Zeros).unwrap();
        let features = FeatureConfig::default();
        Checkpoint::from_store(
            CheckpointHeader {
                kind: NetworkKind::Recognizer,
                feature_hash: features.hash(),
                features,
                step: 7,
                config: serde_json::json!({"layers": 2}),
                parents: vec![],
            },
            &store,
        )
        .unwrap()
    }

    #[test]
    fn file_round_trip_and_id() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.ckpt");
        let ck = sample();
        let id = ck.save(&path).unwrap();
        assert_eq!(id, checkpoint_id(&path).unwrap());
        assert_eq!(id, ck.id().unwrap());
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(back, ck);
    }

    #[test]
    fn missing_file() {
        assert!(matches!(
            Checkpoint::load(Path::new("/nope/pr.ckpt")),
            Err(Error::MissingCheckpoint(_))
        ));
    }

    #[test]
    fn kind_check() {
        assert!(sample().expect_kind(NetworkKind::Recognizer).is_ok());
        assert!(sample().expect_kind(NetworkKind::Vocoder).is_err());
    }

    #[test]
    fn corrupt_bytes_rejected() {
        let mut b = sample().to_bytes().unwrap();
        b.truncate(b.len() - 3);
        assert!(Checkpoint::from_bytes(&b).is_err());
    }
}
