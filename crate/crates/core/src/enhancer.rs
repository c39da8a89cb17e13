//! Taco-SE: the recognizer followed by a copy of the synthesizer, trained to
//! map both real and synthesized mel spectrograms back to the real ones.
//!
//! The recognizer is shared by reference and never updated; the synthesizer
//! part starts as a copy of the conversion synthesizer and then trains on its
//! own, so conversion behaviour does not drift while the enhancer specializes.

use std::sync::Arc;

use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{Checkpoint, NetworkKind};
use crate::error::{Error, Result};
use crate::features::{FeatureConfig, LinearSpectrogram, MelRole, MelSpectrogram};
use crate::recognizer::{PrModel, Ppg};
use crate::training::{BatchSampler, TrainReport};
use crate::store::FeatureStore;
use crate::synthesizer::{
    ScheduledSampling, SynthExample, SynthModel, SynthTrainConfig, SynthTrainer, GUIDE_WEIGHT,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum PairKind {
    /// `<y, y>`
    Identity,
    /// `<ŷ, y>`
    Synth,
}

#[derive(Debug, Clone)]
pub struct EnhancementPair {
    pub input: MelSpectrogram,
    pub target: MelSpectrogram,
    pub kind: PairKind,
}

/// Real features of one utterance plus its synthesized mel, when generated.
#[derive(Debug, Clone)]
pub struct SeUtterance {
    pub id: String,
    pub y: MelSpectrogram,
    pub y_linear: LinearSpectrogram,
    pub yhat: Option<MelSpectrogram>,
}

/// Draws `<y, y>` or `<ŷ, y>` with equal probability.
pub fn sample_pair(rng: &mut ChaCha8Rng, utt: &SeUtterance) -> Result<EnhancementPair> {
    let yhat = utt
        .yhat
        .as_ref()
        .ok_or_else(|| Error::MissingFeature(format!("{}.smspec", utt.id).into()))?;
    let identity = rng.gen::<f64>() < 0.5;
    Ok(EnhancementPair {
        input: if identity { utt.y.clone() } else { yhat.clone() },
        target: utt.y.clone(),
        kind: if identity { PairKind::Identity } else { PairKind::Synth },
    })
}

#[derive(Debug, Clone)]
pub struct TacoSe {
    pr: Arc<PrModel>,
    syn: SynthModel,
}

/// Composes a frozen recognizer with a fresh copy of the synthesizer.
pub fn build_taco_se(pr: Arc<PrModel>, syn: &SynthModel) -> Result<TacoSe> {
    let (pc, sc) = (pr.config(), syn.config());
    if pc.n_classes != sc.n_ppg || pc.n_mels != sc.n_mels {
        return Err(Error::ConfigMismatch(format!(
            "recognizer emits {} classes from {} bands, synthesizer expects {} classes and {} bands",
            pc.n_classes, pc.n_mels, sc.n_ppg, sc.n_mels
        )));
    }
    Ok(TacoSe {
        pr,
        syn: syn.duplicate()?,
    })
}

impl TacoSe {
    /// Rebuilds from checkpoints; all three must share one feature recipe.
    pub fn from_checkpoints(pr: Arc<PrModel>, pr_ck: &Checkpoint, se_ck: &Checkpoint) -> Result<Self> {
        if pr_ck.header.feature_hash != se_ck.header.feature_hash {
            return Err(Error::ConfigMismatch(format!(
                "recognizer features {} differ from enhancer features {}",
                pr_ck.header.feature_hash, se_ck.header.feature_hash
            )));
        }
        let syn = SynthModel::from_checkpoint(se_ck, NetworkKind::Enhancer)?;
        let se = build_taco_se(pr, &syn)?;
        Ok(Self { pr: se.pr, syn })
    }

    pub fn recognizer(&self) -> &PrModel {
        &self.pr
    }

    pub fn synthesizer(&self) -> &SynthModel {
        &self.syn
    }

    pub fn to_checkpoint(&self, features: &FeatureConfig, step: usize, parents: Vec<String>) -> Result<Checkpoint> {
        self.syn.to_checkpoint(NetworkKind::Enhancer, features, step, parents)
    }

    /// Same frame count in and out; values in `[0, 1]`.
    pub fn enhance(&self, m: &MelSpectrogram) -> Result<MelSpectrogram> {
        let ppg = self.pr.extract_ppg(m)?;
        Ok(self.syn.synthesize(&ppg)?.mel.with_role(MelRole::Enhanced))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeTrainConfig {
    pub steps: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub schedule: ScheduledSampling,
    /// Diagonal attention penalty weight, as in [`SynthTrainConfig`].
    #[serde(default = "default_guide")]
    pub guided_attention: f64,
}

fn default_guide() -> f64 {
    GUIDE_WEIGHT
}

impl SeTrainConfig {
    pub fn with_steps(steps: usize) -> Self {
        Self {
            steps,
            learning_rate: 0.0005,
            batch_size: 5,
            seed: 0,
            schedule: ScheduledSampling::new(steps),
            guided_attention: GUIDE_WEIGHT,
        }
    }
}

impl Default for SeTrainConfig {
    fn default() -> Self {
        Self::with_steps(10_000)
    }
}

/// Trains the synthesizer half on pairs drawn by [`sample_pair`]; each example
/// contributes `L_T(T(P(input)), y)`.
pub fn train_taco_se(model: &TacoSe, data: &[SeUtterance], cfg: &SeTrainConfig) -> Result<TrainReport> {
    if data.is_empty() {
        return Err(Error::InvalidInput("no enhancer training utterances".into()));
    }
    // The recognizer is frozen, so PPGs of both inputs can be computed once.
    struct Prepared {
        y_ppg: Ppg,
        yhat_ppg: Ppg,
    }
    let mut prepared = Vec::with_capacity(data.len());
    for u in data {
        let yhat = u
            .yhat
            .as_ref()
            .ok_or_else(|| Error::MissingFeature(format!("{}.smspec", u.id).into()))?;
        if yhat.n_frames() != u.y.n_frames() {
            return Err(Error::Alignment(format!(
                "{}: ŷ has {} frames, y has {}",
                u.id,
                yhat.n_frames(),
                u.y.n_frames()
            )));
        }
        prepared.push(Prepared {
            y_ppg: model.pr.extract_ppg(&u.y)?,
            yhat_ppg: model.pr.extract_ppg(yhat)?,
        });
    }

    let syn_cfg = SynthTrainConfig {
        steps: cfg.steps,
        learning_rate: cfg.learning_rate,
        batch_size: cfg.batch_size,
        seed: cfg.seed,
        schedule: cfg.schedule,
        guided_attention: cfg.guided_attention,
    };
    let mut trainer = SynthTrainer::new(&model.syn, syn_cfg, 0)?;
    let mut sampler = BatchSampler::new(data.len(), cfg.seed);
    let mut pair_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x7a11);
    let mut report = TrainReport::default();
    for _ in 0..cfg.steps {
        let batch = sampler
            .next_batch(cfg.batch_size)
            .into_iter()
            .map(|i| {
                let pair = sample_pair(&mut pair_rng, &data[i])?;
                let ppg = match pair.kind {
                    PairKind::Identity => prepared[i].y_ppg.clone(),
                    PairKind::Synth => prepared[i].yhat_ppg.clone(),
                };
                SynthExample::new(data[i].id.clone(), ppg, pair.target, data[i].y_linear.clone())
            })
            .collect::<Result<Vec<_>>>()?;
        let refs: Vec<&SynthExample> = batch.iter().collect();
        report.losses.push(trainer.train_step(&refs)?);
    }
    Ok(report)
}

/// Outcome of generating one synthesized mel spectrogram.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmspecStatus {
    pub utt_id: String,
    pub ok: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Writes `ŷ = S(P(y))` for every utterance id whose real mel is in `store`.
/// `provenance` lands in each sidecar. Failures are reported, not fatal.
pub fn generate_smspec_corpus(
    pr: &PrModel,
    syn: &SynthModel,
    store: &FeatureStore,
    utt_ids: &[String],
    provenance: &[String],
) -> Vec<SmspecStatus> {
    utt_ids
        .iter()
        .map(|id| {
            let run = || -> Result<()> {
                let y = store.read_mel(&store.mel_path(id))?;
                let yhat = syn.synthesize(&pr.extract_ppg(&y)?)?.mel;
                store.write_mel(&store.smspec_path(id), &yhat, provenance.to_vec())
            };
            match run() {
                Ok(()) => SmspecStatus {
                    utt_id: id.clone(),
                    ok: true,
                    error: None,
                },
                Err(e) => {
                    warn!("{id}: {e}");
                    SmspecStatus {
                        utt_id: id.clone(),
                        ok: false,
                        error: Some(e.to_string()),
                    }
                }
            }
        })
        .collect()
}

/// Loads real features and, when present, the synthesized mel of each id.
pub fn load_se_utterances(store: &FeatureStore, utt_ids: &[String]) -> Result<Vec<SeUtterance>> {
    utt_ids
        .iter()
        .map(|id| {
            let sm = store.smspec_path(id);
            let yhat = match store.read_mel(&sm) {
                Ok(m) => Some(m),
                Err(Error::MissingFeature(_)) => None,
                Err(e) => return Err(e),
            };
            Ok(SeUtterance {
                id: id.clone(),
                y: store.read_mel(&store.mel_path(id))?,
                y_linear: store.read_linear(&store.linear_path(id))?,
                yhat,
            })
        })
        .collect()
}
