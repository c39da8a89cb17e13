//! Signal-processing layer shared by every network.
//!
//! All networks consume and produce the same normalized log-mel features, so the
//! extraction recipe lives in one [`FeatureConfig`] whose hash is embedded in
//! every feature file and checkpoint.

mod griffin_lim;
mod mel;
mod mulaw;
mod resample;
mod stft;
pub mod tvcf;
pub mod wav;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub use griffin_lim::griffin_lim;
pub use mel::{hz_to_mel, mel_filterbank, mel_to_hz, MelFilterbank};
pub use mulaw::{mu_law_decode, mu_law_encode, MuLawWaveform};
pub use resample::resample;
pub use stft::{istft, n_frames_for, stft, Complex32};

/// Mono audio.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f32>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f32>, sample_rate: u32) -> Result<Self> {
        let w = Self {
            samples,
            sample_rate,
        };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        if self.sample_rate == 0 {
            return Err(Error::InvalidInput("sample rate must be positive".into()));
        }
        if let Some(i) = self
            .samples
            .iter()
            .position(|s| !s.is_finite() || s.abs() > 1.0)
        {
            return Err(Error::InvalidInput(format!(
                "sample {i} is {} (must be finite and within [-1, 1])",
                self.samples[i]
            )));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

/// Which signal a mel spectrogram stands for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum MelRole {
    /// Extracted from real audio.
    TrueY,
    /// Produced by the synthesizer.
    SynthYhat,
    /// Produced by the enhancement network.
    Enhanced,
}

/// A row-major `[n_frames × n_bins]` matrix of features in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Frames {
    data: Vec<f32>,
    n_frames: usize,
    n_bins: usize,
}

impl Frames {
    pub fn new(data: Vec<f32>, n_frames: usize, n_bins: usize) -> Result<Self> {
        if data.len() != n_frames * n_bins {
            return Err(Error::Shape(format!(
                "{} values cannot form {n_frames} x {n_bins}",
                data.len()
            )));
        }
        Ok(Self {
            data,
            n_frames,
            n_bins,
        })
    }

    pub fn zeros(n_frames: usize, n_bins: usize) -> Self {
        Self {
            data: vec![0.0; n_frames * n_bins],
            n_frames,
            n_bins,
        }
    }

    pub fn n_frames(&self) -> usize {
        self.n_frames
    }

    pub fn n_bins(&self) -> usize {
        self.n_bins
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.data
    }

    pub fn row(&self, t: usize) -> &[f32] {
        &self.data[t * self.n_bins..(t + 1) * self.n_bins]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f32]> {
        self.data.chunks_exact(self.n_bins.max(1))
    }

    /// Mean absolute difference; shapes must agree.
    pub fn mean_l1(&self, other: &Frames) -> Result<f32> {
        if self.n_frames != other.n_frames || self.n_bins != other.n_bins {
            return Err(Error::Shape(format!(
                "{}x{} vs {}x{}",
                self.n_frames, self.n_bins, other.n_frames, other.n_bins
            )));
        }
        let sum: f64 = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs() as f64)
            .sum();
        Ok((sum / self.data.len().max(1) as f64) as f32)
    }

    /// Per-bin mean over time.
    pub fn time_average(&self) -> Vec<f32> {
        let mut acc = vec![0.0f64; self.n_bins];
        for row in self.rows() {
            for (a, v) in acc.iter_mut().zip(row) {
                *a += *v as f64;
            }
        }
        acc.iter()
            .map(|a| (a / self.n_frames.max(1) as f64) as f32)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MelSpectrogram {
    pub frames: Frames,
    pub role: MelRole,
}

impl MelSpectrogram {
    pub fn new(frames: Frames, role: MelRole) -> Self {
        Self { frames, role }
    }

    pub fn n_frames(&self) -> usize {
        self.frames.n_frames()
    }

    pub fn n_mels(&self) -> usize {
        self.frames.n_bins()
    }

    pub fn with_role(mut self, role: MelRole) -> Self {
        self.role = role;
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearSpectrogram {
    pub frames: Frames,
}

impl LinearSpectrogram {
    pub fn n_frames(&self) -> usize {
        self.frames.n_frames()
    }
}

/// Feature extraction recipe. One instance is shared by every network of a
/// pipeline; [`FeatureConfig::hash`] identifies it in files and checkpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureConfig {
    pub sample_rate: u32,
    pub n_fft: usize,
    pub hop_length: usize,
    pub n_mels: usize,
    pub fmin: f32,
    pub fmax: f32,
    /// Always `"slaney"`; recorded so files from another recipe are rejected.
    pub mel_scale: String,
    /// Floor of the dB scale; normalized value 0.
    pub min_level_db: f32,
    /// Subtracted from dB magnitudes before normalization.
    pub ref_level_db: f32,
    /// `"reflect"` center padding of `n_fft / 2` on both sides.
    pub padding: String,
    /// Pre-emphasis is not applied; kept in the record for compatibility checks.
    pub preemphasis: f32,
    /// Symmetric mu-law quantizer, zero maps to the upper middle code.
    pub mu_law_rounding: String,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            sample_rate: 22050,
            n_fft: 1024,
            hop_length: 256,
            n_mels: 80,
            fmin: 125.0,
            fmax: 7600.0,
            mel_scale: "slaney".into(),
            min_level_db: -100.0,
            ref_level_db: 20.0,
            padding: "reflect".into(),
            preemphasis: 0.0,
            mu_law_rounding: "round-half-up, 0.0 -> 128".into(),
        }
    }
}

impl FeatureConfig {
    pub fn n_linear_bins(&self) -> usize {
        self.n_fft / 2 + 1
    }

    pub fn validate(&self) -> Result<()> {
        if self.sample_rate == 0 || self.n_fft == 0 || self.hop_length == 0 || self.n_mels == 0 {
            return Err(Error::InvalidConfig(
                "feature sizes must be positive".into(),
            ));
        }
        if !(self.fmin >= 0.0 && self.fmin < self.fmax && self.fmax <= self.sample_rate as f32 / 2.0)
        {
            return Err(Error::InvalidConfig(format!(
                "mel range {}..{} Hz is not inside 0..Nyquist",
                self.fmin, self.fmax
            )));
        }
        if self.mel_scale != "slaney" {
            return Err(Error::InvalidConfig(format!(
                "unsupported mel scale {:?}",
                self.mel_scale
            )));
        }
        if self.min_level_db >= 0.0 {
            return Err(Error::InvalidConfig("min_level_db must be negative".into()));
        }
        Ok(())
    }

    /// Short hex digest of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("feature config serializes");
        let digest = Sha256::digest(&json);
        hex::encode(&digest[..8])
    }

    /// Magnitude → normalized log value in `[0, 1]`.
    pub fn normalize(&self, magnitude: f32) -> f32 {
        let floor = 10f32.powf(self.min_level_db / 20.0);
        let db = 20.0 * magnitude.max(floor).log10() - self.ref_level_db;
        ((db - self.min_level_db) / -self.min_level_db).clamp(0.0, 1.0)
    }

    /// Inverse of [`normalize`](Self::normalize) on `(0, 1]`; zero maps to silence.
    pub fn denormalize(&self, value: f32) -> f32 {
        if value <= 0.0 {
            return 0.0;
        }
        let db = value.min(1.0) * -self.min_level_db + self.min_level_db + self.ref_level_db;
        10f32.powf(db / 20.0)
    }

    fn check_waveform(&self, w: &Waveform) -> Result<()> {
        if w.is_empty() {
            return Err(Error::InvalidInput("empty waveform".into()));
        }
        if w.sample_rate != self.sample_rate {
            return Err(Error::SampleRateMismatch {
                expected: self.sample_rate,
                actual: w.sample_rate,
            });
        }
        w.validate()
    }
}

/// Extracts matched mel and linear spectrograms with shared framing.
///
/// The filterbank is built once; extraction itself is a pure function of the
/// waveform.
#[derive(Debug, Clone)]
pub struct FeatureExtractor {
    cfg: FeatureConfig,
    filterbank: MelFilterbank,
}

impl FeatureExtractor {
    pub fn new(cfg: FeatureConfig) -> Result<Self> {
        cfg.validate()?;
        let filterbank = mel_filterbank(&cfg);
        Ok(Self { cfg, filterbank })
    }

    pub fn config(&self) -> &FeatureConfig {
        &self.cfg
    }

    pub fn filterbank(&self) -> &MelFilterbank {
        &self.filterbank
    }

    fn magnitudes(&self, w: &Waveform) -> Result<Vec<Vec<f32>>> {
        self.cfg.check_waveform(w)?;
        let spec = stft(&w.samples, self.cfg.n_fft, self.cfg.hop_length);
        Ok(spec
            .into_iter()
            .map(|frame| frame.iter().map(|c| c.norm()).collect())
            .collect())
    }

    pub fn melspec(&self, w: &Waveform) -> Result<MelSpectrogram> {
        let mags = self.magnitudes(w)?;
        Ok(self.mel_from_magnitudes(&mags))
    }

    pub fn linspec(&self, w: &Waveform) -> Result<LinearSpectrogram> {
        let mags = self.magnitudes(w)?;
        Ok(self.lin_from_magnitudes(&mags))
    }

    /// Both spectrograms from one STFT pass.
    pub fn both(&self, w: &Waveform) -> Result<(MelSpectrogram, LinearSpectrogram)> {
        let mags = self.magnitudes(w)?;
        Ok((self.mel_from_magnitudes(&mags), self.lin_from_magnitudes(&mags)))
    }

    fn mel_from_magnitudes(&self, mags: &[Vec<f32>]) -> MelSpectrogram {
        let n_mels = self.cfg.n_mels;
        let mut data = Vec::with_capacity(mags.len() * n_mels);
        for frame in mags {
            for m in 0..n_mels {
                let energy = self.filterbank.apply_band(m, frame);
                data.push(self.cfg.normalize(energy));
            }
        }
        let frames = Frames::new(data, mags.len(), n_mels).expect("consistent shape");
        MelSpectrogram::new(frames, MelRole::TrueY)
    }

    fn lin_from_magnitudes(&self, mags: &[Vec<f32>]) -> LinearSpectrogram {
        let bins = self.cfg.n_linear_bins();
        let data = mags
            .iter()
            .flat_map(|f| f.iter().map(|&m| self.cfg.normalize(m)))
            .collect();
        LinearSpectrogram {
            frames: Frames::new(data, mags.len(), bins).expect("consistent shape"),
        }
    }
}

/// One-shot mel extraction with the given recipe.
pub fn waveform_to_melspec(w: &Waveform, cfg: &FeatureConfig) -> Result<MelSpectrogram> {
    FeatureExtractor::new(cfg.clone())?.melspec(w)
}

/// One-shot linear spectrogram extraction with the given recipe.
pub fn waveform_to_linspec(w: &Waveform, cfg: &FeatureConfig) -> Result<LinearSpectrogram> {
    FeatureExtractor::new(cfg.clone())?.linspec(w)
}
