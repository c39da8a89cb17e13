//! JSON-lines dataset manifests: one utterance per line.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::write_atomic;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub utt_id: String,
    /// WAV path; relative paths resolve against the manifest's directory.
    pub audio: PathBuf,
    pub speaker: String,
    /// Whitespace-separated phone symbols.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transcript: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub records: Vec<ManifestRecord>,
    base_dir: PathBuf,
}

impl Manifest {
    pub fn new(records: Vec<ManifestRecord>, base_dir: impl Into<PathBuf>) -> Result<Self> {
        let mut seen = HashSet::new();
        for r in &records {
            if r.utt_id.is_empty() || r.utt_id.contains(['/', '\\']) {
                return Err(Error::InvalidInput(format!("bad utterance id {:?}", r.utt_id)));
            }
            if !seen.insert(r.utt_id.as_str()) {
                return Err(Error::InvalidInput(format!("duplicate utterance id {}", r.utt_id)));
            }
        }
        Ok(Self {
            records,
            base_dir: base_dir.into(),
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut records = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let rec: ManifestRecord = serde_json::from_str(line).map_err(|e| {
                Error::Format(format!("{}:{}: {e}", path.display(), i + 1))
            })?;
            records.push(rec);
        }
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::new(records, base)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r)?);
            out.push('\n');
        }
        write_atomic(path, out.as_bytes())
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn base_dir(&self) -> &Path {
        &self.base_dir
    }

    pub fn audio_path(&self, rec: &ManifestRecord) -> PathBuf {
        if rec.audio.is_absolute() {
            rec.audio.clone()
        } else {
            self.base_dir.join(&rec.audio)
        }
    }

    /// Fails unless every record carries a transcript.
    pub fn require_transcripts(&self) -> Result<()> {
        match self.records.iter().find(|r| r.transcript.is_none()) {
            Some(r) => Err(Error::InvalidInput(format!("{} has no transcript", r.utt_id))),
            None => Ok(()),
        }
    }

    /// Distinct speaker ids in first-seen order.
    pub fn speakers(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for r in &self.records {
            if !out.contains(&r.speaker) {
                out.push(r.speaker.clone());
            }
        }
        out
    }

    pub fn for_speaker(&self, speaker: &str) -> Self {
        Self {
            records: self
                .records
                .iter()
                .filter(|r| r.speaker == speaker)
                .cloned()
                .collect(),
            base_dir: self.base_dir.clone(),
        }
    }
}
