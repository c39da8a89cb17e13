//! One configuration object for a whole pipeline. The feature recipe lives
//! here once; every network reads its band count and hop from it.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::adaptation::AdaptationPlan;
use crate::enhancer::SeTrainConfig;
use crate::error::{Error, Result};
use crate::features::FeatureConfig;
use crate::recognizer::{PrConfig, PrTrainConfig};
use crate::synthesizer::{SynthConfig, SynthTrainConfig};
use crate::vocoder::{VocoderConfig, VocoderTrainConfig};

/// Network sizes: `Desk` trains on a laptop CPU, `Paper` restores the full widths.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    Desk,
    Paper,
}

impl std::str::FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Preset::Desk),
            "paper" => Ok(Preset::Paper),
            other => Err(Error::InvalidConfig(format!("unknown preset {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub recognizer: PrTrainConfig,
    pub synthesizer: SynthTrainConfig,
    pub enhancer: SeTrainConfig,
    pub vocoder: VocoderTrainConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub features: FeatureConfig,
    pub recognizer: PrConfig,
    pub synthesizer: SynthConfig,
    pub vocoder: VocoderConfig,
    pub training: TrainingConfig,
    pub adaptation: AdaptationPlan,
    /// Where checkpoints are read and written when no other root is given.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint_dir: Option<PathBuf>,
    pub seed: u64,
}

impl PipelineConfig {
    pub fn preset(preset: Preset) -> Self {
        let (recognizer, synthesizer, vocoder) = match preset {
            Preset::Desk => (PrConfig::desk(), SynthConfig::desk(), VocoderConfig::desk()),
            Preset::Paper => (PrConfig::paper(), SynthConfig::paper(), VocoderConfig::paper()),
        };
        Self {
            features: FeatureConfig::default(),
            recognizer,
            synthesizer,
            vocoder,
            training: TrainingConfig {
                recognizer: PrTrainConfig::default(),
                synthesizer: SynthTrainConfig::default(),
                enhancer: SeTrainConfig::default(),
                vocoder: VocoderTrainConfig::default(),
            },
            adaptation: AdaptationPlan::default(),
            checkpoint_dir: None,
            seed: 0,
        }
    }

    /// Reads a JSON config and validates it.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let cfg: Self = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::io::write_atomic(path, serde_json::to_string_pretty(self)?.as_bytes())
    }

    /// Sets the seed of the pipeline and of every training loop.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.training.recognizer.seed = seed;
        self.training.synthesizer.seed = seed;
        self.training.enhancer.seed = seed;
        self.training.vocoder.seed = seed;
        self.adaptation.synthesizer.seed = seed;
        self.adaptation.enhancer.seed = seed;
        self.adaptation.vocoder.seed = seed;
        self
    }

    /// Checks that every network agrees with the feature recipe.
    pub fn validate(&self) -> Result<()> {
        let f = &self.features;
        f.validate()?;
        self.recognizer.validate()?;
        self.synthesizer.validate()?;
        self.vocoder.validate(f.hop_length)?;
        let mismatch = |what: &str, got: usize, want: usize| {
            Err(Error::ConfigMismatch(format!("{what} is {got}, features give {want}")))
        };
        if self.recognizer.n_mels != f.n_mels {
            return mismatch("recognizer band count", self.recognizer.n_mels, f.n_mels);
        }
        if self.synthesizer.n_mels != f.n_mels {
            return mismatch("synthesizer band count", self.synthesizer.n_mels, f.n_mels);
        }
        if self.vocoder.n_mels != f.n_mels {
            return mismatch("vocoder band count", self.vocoder.n_mels, f.n_mels);
        }
        if self.synthesizer.n_linear != f.n_linear_bins() {
            return mismatch("synthesizer linear bins", self.synthesizer.n_linear, f.n_linear_bins());
        }
        if self.vocoder.sample_rate != f.sample_rate {
            return mismatch(
                "vocoder sample rate",
                self.vocoder.sample_rate as usize,
                f.sample_rate as usize,
            );
        }
        if self.synthesizer.n_ppg != self.recognizer.n_classes {
            return Err(Error::ConfigMismatch(format!(
                "synthesizer reads {} PPG classes, recognizer emits {}",
                self.synthesizer.n_ppg, self.recognizer.n_classes
            )));
        }
        Ok(())
    }
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self::preset(Preset::Desk)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        PipelineConfig::preset(Preset::Desk).validate().unwrap();
        PipelineConfig::preset(Preset::Paper).validate().unwrap();
        assert_eq!("paper".parse::<Preset>().unwrap(), Preset::Paper);
        assert!("huge".parse::<Preset>().is_err());
    }

    #[test]
    fn band_count_disagreement_is_rejected() {
        let mut cfg = PipelineConfig::default();
        cfg.features.n_mels = 64;
        assert!(matches!(cfg.validate(), Err(Error::ConfigMismatch(_))));
        let mut cfg = PipelineConfig::default();
        cfg.features.hop_length = 200;
        assert!(matches!(cfg.validate(), Err(Error::ConfigMismatch(_))));
    }

    #[test]
    fn seed_reaches_every_loop() {
        let cfg = PipelineConfig::default().with_seed(42);
        assert_eq!(cfg.training.recognizer.seed, 42);
        assert_eq!(cfg.training.vocoder.seed, 42);
        assert_eq!(cfg.adaptation.enhancer.seed, 42);
    }

    #[test]
    fn json_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pipeline.json");
        let cfg = PipelineConfig::preset(Preset::Paper).with_seed(3);
        cfg.save(&path).unwrap();
        assert_eq!(PipelineConfig::load(&path).unwrap(), cfg);
    }
}
