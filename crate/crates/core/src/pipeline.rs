//! End-to-end conversion: waveform → mel → PPG → synthesizer → enhancer → vocoder.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::checkpoint::{require_same_features, Checkpoint, CheckpointSet, NetworkKind};
use crate::enhancer::TacoSe;
use crate::error::{Error, Result};
use crate::features::{griffin_lim, FeatureConfig, FeatureExtractor, MelSpectrogram, Waveform};
use crate::recognizer::{PrModel, Ppg};
use crate::synthesizer::{Synthesis, SynthModel};
use crate::vocoder::{generate, GenerateMode, VocoderModel};

/// Waveform generator used by [`Converter`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VocoderKind {
    /// The trained autoregressive vocoder, fed the (enhanced) mel.
    Neural(GenerateMode),
    /// Phase reconstruction of the synthesizer's linear output; for debugging.
    GriffinLim { iters: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvertOptions {
    /// Run the enhancer on the synthesized mel; off gives the no-enhancement ablation.
    pub enhance: bool,
    pub vocoder: VocoderKind,
    /// Seeds sampled generation and the Griffin-Lim initial phase.
    pub seed: u64,
}

impl Default for ConvertOptions {
    fn default() -> Self {
        Self {
            enhance: true,
            vocoder: VocoderKind::Neural(GenerateMode::Argmax),
            seed: 0,
        }
    }
}

/// Intermediate and final products of one conversion.
#[derive(Debug, Clone)]
pub struct Conversion {
    pub source_mel: MelSpectrogram,
    pub ppg: Ppg,
    pub synthesis: Synthesis,
    /// The mel handed to the vocoder: enhanced, or the SMSPEC under the ablation.
    pub mel: MelSpectrogram,
    pub waveform: Waveform,
}

/// Output file name for a converted utterance.
pub fn output_name(utt_id: &str, source_speaker: &str, target_speaker: &str) -> String {
    format!("{utt_id}__{source_speaker}_to_{target_speaker}.wav")
}

/// Loaded networks of one checkpoint set, validated against one feature recipe.
pub struct Converter {
    features: FeatureConfig,
    extractor: FeatureExtractor,
    pr: Arc<PrModel>,
    syn: SynthModel,
    se: Option<TacoSe>,
    vocoder: Option<VocoderModel>,
    opts: ConvertOptions,
}

impl Converter {
    /// Loads only the checkpoints `opts` needs. Every one of them must carry the
    /// same feature hash, checked before any network is built.
    pub fn load(set: &CheckpointSet, opts: ConvertOptions) -> Result<Self> {
        let mut kinds = vec![NetworkKind::Recognizer, NetworkKind::Synthesizer];
        if opts.enhance {
            kinds.push(NetworkKind::Enhancer);
        }
        if matches!(opts.vocoder, VocoderKind::Neural(_)) {
            kinds.push(NetworkKind::Vocoder);
        }
        set.require(&kinds)?;
        let cks: Vec<Checkpoint> = kinds.iter().map(|&k| set.load(k)).collect::<Result<_>>()?;
        require_same_features(&cks.iter().collect::<Vec<_>>())?;
        let features = cks[0].header.features.clone();
        if features.hash() != cks[0].header.feature_hash {
            return Err(Error::ConfigMismatch(
                "recognizer checkpoint header disagrees with its feature hash".into(),
            ));
        }
        let get = |k: NetworkKind| cks.iter().find(|c| c.header.kind == k);

        let pr = Arc::new(PrModel::from_checkpoint(&cks[0])?);
        let syn = SynthModel::from_checkpoint(&cks[1], NetworkKind::Synthesizer)?;
        if pr.config().n_mels != features.n_mels || syn.config().n_mels != features.n_mels {
            return Err(Error::ConfigMismatch(format!(
                "networks use {}/{} bands, features have {}",
                pr.config().n_mels,
                syn.config().n_mels,
                features.n_mels
            )));
        }
        if pr.config().n_classes != syn.config().n_ppg {
            return Err(Error::ConfigMismatch(format!(
                "recognizer emits {} classes, synthesizer reads {}",
                pr.config().n_classes,
                syn.config().n_ppg
            )));
        }
        let se = match get(NetworkKind::Enhancer) {
            Some(ck) => Some(TacoSe::from_checkpoints(pr.clone(), &cks[0], ck)?),
            None => None,
        };
        let vocoder = match get(NetworkKind::Vocoder) {
            Some(ck) => {
                let v = VocoderModel::from_checkpoint(ck)?;
                if v.config().n_mels != features.n_mels || v.config().sample_rate != features.sample_rate {
                    return Err(Error::ConfigMismatch(
                        "vocoder bands or sample rate differ from the feature recipe".into(),
                    ));
                }
                Some(v)
            }
            None => None,
        };
        Ok(Self {
            extractor: FeatureExtractor::new(features.clone())?,
            features,
            pr,
            syn,
            se,
            vocoder,
            opts,
        })
    }

    pub fn features(&self) -> &FeatureConfig {
        &self.features
    }

    /// Output length is `source mel frames × hop` samples.
    pub fn convert(&self, source: &Waveform) -> Result<Conversion> {
        if source.sample_rate != self.features.sample_rate {
            return Err(Error::SampleRateMismatch {
                expected: self.features.sample_rate,
                actual: source.sample_rate,
            });
        }
        let source_mel = self.extractor.melspec(source)?;
        let ppg = self.pr.extract_ppg(&source_mel)?;
        let synthesis = self.syn.synthesize(&ppg)?;
        let mel = match &self.se {
            Some(se) => se.enhance(&synthesis.mel)?,
            None => synthesis.mel.clone(),
        };
        let n_samples = source_mel.n_frames() * self.features.hop_length;
        let waveform = match (self.opts.vocoder, &self.vocoder) {
            (VocoderKind::Neural(mode), Some(v)) => generate(v, &mel, mode, self.opts.seed)?,
            (VocoderKind::GriffinLim { iters }, _) => {
                let mut w = griffin_lim(&synthesis.linear, &self.features, iters, self.opts.seed)?;
                w.samples.resize(n_samples, 0.0);
                w
            }
            (VocoderKind::Neural(_), None) => unreachable!("load requires a vocoder checkpoint"),
        };
        Ok(Conversion {
            source_mel,
            ppg,
            synthesis,
            mel,
            waveform,
        })
    }
}
