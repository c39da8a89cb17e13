//! On-disk feature layout: one TVCF file plus JSON sidecar per utterance and
//! kind, all in one directory.
//!
//! | file            | content                          |
//! |-----------------|----------------------------------|
//! | `<id>.mel`      | mel spectrogram of the recording |
//! | `<id>.lin`      | linear spectrogram               |
//! | `<id>.smspec`   | synthesized mel spectrogram      |

use std::path::{Path, PathBuf};

use log::info;

use crate::error::{Error, Result};
use crate::features::tvcf::{Sidecar, TensorData};
use crate::features::wav::read_wav;
use crate::features::{
    resample, FeatureConfig, FeatureExtractor, Frames, LinearSpectrogram, MelRole, MelSpectrogram,
    Waveform,
};
use crate::manifest::{Manifest, ManifestRecord};

#[derive(Debug, Clone)]
pub struct FeatureStore {
    dir: PathBuf,
    features: FeatureConfig,
    hash: String,
}

impl FeatureStore {
    pub fn new(dir: impl Into<PathBuf>, features: FeatureConfig) -> Result<Self> {
        features.validate()?;
        Ok(Self {
            dir: dir.into(),
            hash: features.hash(),
            features,
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn features(&self) -> &FeatureConfig {
        &self.features
    }

    pub fn mel_path(&self, utt_id: &str) -> PathBuf {
        self.dir.join(format!("{utt_id}.mel"))
    }

    pub fn linear_path(&self, utt_id: &str) -> PathBuf {
        self.dir.join(format!("{utt_id}.lin"))
    }

    pub fn smspec_path(&self, utt_id: &str) -> PathBuf {
        self.dir.join(format!("{utt_id}.smspec"))
    }

    fn sidecar(&self, kind: &str, role: Option<MelRole>, provenance: Vec<String>) -> Sidecar {
        Sidecar {
            kind: kind.into(),
            role,
            feature_hash: self.hash.clone(),
            features: self.features.clone(),
            provenance,
        }
    }

    /// Sidecar of `path`, checked against this store's feature recipe.
    pub fn read_sidecar(&self, path: &Path, kind: &str) -> Result<Sidecar> {
        let side = Sidecar::read(path)?;
        if side.feature_hash != self.hash {
            return Err(Error::ConfigMismatch(format!(
                "{} was extracted with feature recipe {}, expected {}",
                path.display(),
                side.feature_hash,
                self.hash
            )));
        }
        if side.kind != kind {
            return Err(Error::Format(format!(
                "{} holds {} features, expected {kind}",
                path.display(),
                side.kind
            )));
        }
        Ok(side)
    }

    fn write_frames(&self, path: &Path, frames: &Frames, side: Sidecar) -> Result<()> {
        TensorData::new(
            vec![frames.n_frames(), frames.n_bins()],
            frames.as_slice().to_vec(),
        )?
        .write(path)?;
        side.write(path)
    }

    fn read_frames(&self, path: &Path, bins: usize) -> Result<Frames> {
        let t = TensorData::read(path)?;
        if t.dims.len() != 2 || t.dims[1] != bins {
            return Err(Error::Shape(format!(
                "{}: expected [frames, {bins}], found {:?}",
                path.display(),
                t.dims
            )));
        }
        Frames::new(t.values, t.dims[0], bins)
    }

    pub fn write_mel(&self, path: &Path, mel: &MelSpectrogram, provenance: Vec<String>) -> Result<()> {
        self.write_frames(path, &mel.frames, self.sidecar("mel", Some(mel.role), provenance))
    }

    pub fn read_mel(&self, path: &Path) -> Result<MelSpectrogram> {
        let side = self.read_sidecar(path, "mel")?;
        let frames = self.read_frames(path, self.features.n_mels)?;
        Ok(MelSpectrogram::new(frames, side.role.unwrap_or(MelRole::TrueY)))
    }

    pub fn write_linear(&self, path: &Path, lin: &LinearSpectrogram) -> Result<()> {
        self.write_frames(path, &lin.frames, self.sidecar("linear", None, vec![]))
    }

    pub fn read_linear(&self, path: &Path) -> Result<LinearSpectrogram> {
        self.read_sidecar(path, "linear")?;
        Ok(LinearSpectrogram {
            frames: self.read_frames(path, self.features.n_linear_bins())?,
        })
    }

    /// Audio of `rec` at this store's sample rate.
    pub fn read_audio(&self, manifest: &Manifest, rec: &ManifestRecord) -> Result<Waveform> {
        let w = read_wav(&manifest.audio_path(rec))?;
        if w.sample_rate == self.features.sample_rate {
            return Ok(w);
        }
        info!("{}: resampling {} Hz to {} Hz", rec.utt_id, w.sample_rate, self.features.sample_rate);
        resample(&w, self.features.sample_rate)
    }

    /// Extracts mel and linear features for every record, resampling audio
    /// recorded at another rate. Returns the number of utterances written.
    pub fn extract_manifest(&self, manifest: &Manifest) -> Result<usize> {
        let fx = FeatureExtractor::new(self.features.clone())?;
        std::fs::create_dir_all(&self.dir)?;
        for rec in &manifest.records {
            let w = self.read_audio(manifest, rec)?;
            let (mel, lin) = fx.both(&w)?;
            self.write_mel(&self.mel_path(&rec.utt_id), &mel, vec![])?;
            self.write_linear(&self.linear_path(&rec.utt_id), &lin)?;
        }
        Ok(manifest.len())
    }
}
