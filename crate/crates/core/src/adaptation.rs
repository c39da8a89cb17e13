//! Limited-data speaker adaptation.
//!
//! Four strictly ordered stages turn a base checkpoint set into one for a new
//! target speaker:
//!
//! 1. fine-tune the synthesizer on the target's PPG/spectrogram pairs with a
//!    fresh scheduled-sampling decay;
//! 2. regenerate every target SMSPEC with the fine-tuned synthesizer, tagging
//!    each sidecar with that checkpoint's id;
//! 3. fine-tune the enhancer on those SMSPECs, refusing any whose tag names
//!    another synthesizer;
//! 4. fine-tune the vocoder.
//!
//! The recognizer is speaker independent and is copied byte for byte. A stage
//! with zero steps copies its base checkpoint unchanged.

use std::io::Write;
use std::sync::Arc;
use std::time::Instant;

use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::checkpoint::{require_same_features, Checkpoint, CheckpointSet, NetworkKind};
use crate::enhancer::{generate_smspec_corpus, load_se_utterances, train_taco_se, SeTrainConfig, SmspecStatus, TacoSe};
use crate::error::{Error, Result};
use crate::io::write_atomic;
use crate::manifest::Manifest;
use crate::recognizer::PrModel;
use crate::store::FeatureStore;
use crate::synthesizer::{train_synthesizer, SynthExample, SynthModel, SynthTrainConfig};
use crate::vocoder::{prepare_pair, train_vocoder, VocoderModel, VocoderTrainConfig};

/// Which mel spectrograms condition the vocoder during fine-tuning.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VocoderInput {
    /// Mels of the target recordings, as in base training.
    #[default]
    True,
    /// Enhanced SMSPECs from the fine-tuned enhancer.
    Enhanced,
}

/// Step counts and schedules of the three fine-tuning stages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptationPlan {
    pub synthesizer: SynthTrainConfig,
    pub enhancer: SeTrainConfig,
    pub vocoder: VocoderTrainConfig,
    #[serde(default)]
    pub vocoder_input: VocoderInput,
}

impl Default for AdaptationPlan {
    /// 10,000 synthesizer, 10,000 enhancer and 20,000 vocoder steps.
    fn default() -> Self {
        Self::with_steps(10_000, 10_000, 20_000)
    }
}

impl AdaptationPlan {
    /// Each sampling schedule restarts at 1.0 and decays over its own stage.
    pub fn with_steps(synthesizer: usize, enhancer: usize, vocoder: usize) -> Self {
        Self {
            synthesizer: SynthTrainConfig::with_steps(synthesizer),
            enhancer: SeTrainConfig::with_steps(enhancer),
            vocoder: VocoderTrainConfig {
                steps: vocoder,
                ..VocoderTrainConfig::default()
            },
            vocoder_input: VocoderInput::True,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.synthesizer.schedule.validate()?;
        self.enhancer.schedule.validate()?;
        let batches = [
            self.synthesizer.batch_size,
            self.enhancer.batch_size,
            self.vocoder.batch_size,
        ];
        if batches.contains(&0) || self.vocoder.crop_samples == 0 {
            return Err(Error::InvalidConfig("batch and crop sizes must be positive".into()));
        }
        Ok(())
    }
}

/// One line of the adaptation log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: u8,
    pub name: String,
    /// Checkpoint the stage started from, if it reads one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input_checkpoint: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_checkpoint: Option<String>,
    pub steps: usize,
    pub utterances: usize,
    pub wall_secs: f64,
}

#[derive(Debug, Clone, Default)]
pub struct AdaptationReport {
    pub stages: Vec<StageRecord>,
    /// Utterances whose SMSPEC could not be regenerated.
    pub smspec_failures: Vec<SmspecStatus>,
}

/// Provenance tag written into regenerated SMSPEC sidecars.
pub fn synthesizer_tag(checkpoint_id: &str) -> String {
    format!("synthesizer={checkpoint_id}")
}

/// Stage 2: writes `S'(P(y))` for every id, tagged with `syn_id`.
pub fn regenerate_target_smspecs(
    pr: &PrModel,
    syn: &SynthModel,
    syn_id: &str,
    store: &FeatureStore,
    utt_ids: &[String],
) -> Vec<SmspecStatus> {
    generate_smspec_corpus(pr, syn, store, utt_ids, &[synthesizer_tag(syn_id)])
}

/// Fails with `StaleFeatures` if any SMSPEC was not produced by `syn_id`.
pub fn check_smspec_provenance(store: &FeatureStore, utt_ids: &[String], syn_id: &str) -> Result<()> {
    let tag = synthesizer_tag(syn_id);
    for id in utt_ids {
        let path = store.smspec_path(id);
        let side = store.read_sidecar(&path, "mel")?;
        if !side.provenance.contains(&tag) {
            return Err(Error::StaleFeatures(format!(
                "{} carries {:?}, expected {tag}",
                path.display(),
                side.provenance
            )));
        }
    }
    Ok(())
}

fn copy_checkpoint(base: &CheckpointSet, out: &CheckpointSet, kind: NetworkKind) -> Result<String> {
    write_atomic(&out.path(kind), &std::fs::read(base.path(kind))?)?;
    out.id(kind)
}

struct AdaptationLog {
    file: std::fs::File,
}

impl AdaptationLog {
    fn open(out: &CheckpointSet) -> Result<Self> {
        let file = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(out.dir.join("adaptation.jsonl"))?;
        Ok(Self { file })
    }

    fn append(&mut self, rec: &StageRecord, report: &mut AdaptationReport) -> Result<()> {
        info!("stage {} ({}) done in {:.1}s", rec.stage, rec.name, rec.wall_secs);
        writeln!(self.file, "{}", serde_json::to_string(rec)?)?;
        report.stages.push(rec.clone());
        Ok(())
    }
}

/// Adapts the checkpoints in `base` to the speaker of `target` and writes the
/// result to `out`. `store` receives the target's features.
pub fn adapt(
    base: &CheckpointSet,
    out: &CheckpointSet,
    target: &Manifest,
    store: &FeatureStore,
    plan: &AdaptationPlan,
) -> Result<AdaptationReport> {
    base.require(&CheckpointSet::KINDS)?;
    if target.is_empty() {
        return Err(Error::InvalidInput("target manifest is empty".into()));
    }
    if base.dir == out.dir {
        return Err(Error::InvalidInput("adaptation must write to a new checkpoint directory".into()));
    }
    plan.validate()?;
    let cks: Vec<Checkpoint> = CheckpointSet::KINDS
        .iter()
        .map(|&k| base.load(k))
        .collect::<Result<_>>()?;
    require_same_features(&cks.iter().collect::<Vec<_>>())?;
    let [pr_ck, syn_ck, se_ck, voc_ck] = &cks[..] else {
        unreachable!("four kinds")
    };
    if pr_ck.header.feature_hash != store.features().hash() {
        return Err(Error::ConfigMismatch(format!(
            "checkpoints use feature recipe {}, store uses {}",
            pr_ck.header.feature_hash,
            store.features().hash()
        )));
    }
    std::fs::create_dir_all(&out.dir)?;
    let mut log = AdaptationLog::open(out)?;
    let mut report = AdaptationReport::default();
    let features = &pr_ck.header.features;
    let ids: Vec<String> = target.records.iter().map(|r| r.utt_id.clone()).collect();

    copy_checkpoint(base, out, NetworkKind::Recognizer)?;
    let pr = Arc::new(PrModel::from_checkpoint(pr_ck)?);
    store.extract_manifest(target)?;

    // Stage 1: synthesizer.
    let t = Instant::now();
    let base_syn_id = base.id(NetworkKind::Synthesizer)?;
    let steps = plan.synthesizer.steps;
    let syn = SynthModel::from_checkpoint(syn_ck, NetworkKind::Synthesizer)?;
    let syn_id = if steps == 0 {
        copy_checkpoint(base, out, NetworkKind::Synthesizer)?
    } else {
        let data = ids
            .iter()
            .map(|id| {
                let mel = store.read_mel(&store.mel_path(id))?;
                let linear = store.read_linear(&store.linear_path(id))?;
                SynthExample::new(id.clone(), pr.extract_ppg(&mel)?, mel, linear)
            })
            .collect::<Result<Vec<_>>>()?;
        train_synthesizer(&syn, &data, &plan.synthesizer)?;
        syn.to_checkpoint(
            NetworkKind::Synthesizer,
            features,
            syn_ck.header.step + steps,
            vec![base_syn_id.clone()],
        )?
        .save(&out.path(NetworkKind::Synthesizer))?
    };
    log.append(
        &StageRecord {
            stage: 1,
            name: "synthesizer".into(),
            input_checkpoint: Some(base_syn_id),
            output_checkpoint: Some(syn_id.clone()),
            steps,
            utterances: ids.len(),
            wall_secs: t.elapsed().as_secs_f64(),
        },
        &mut report,
    )?;

    // Stage 2: SMSPECs from the fine-tuned synthesizer.
    let t = Instant::now();
    let statuses = regenerate_target_smspecs(&pr, &syn, &syn_id, store, &ids);
    let good: Vec<String> = statuses.iter().filter(|s| s.ok).map(|s| s.utt_id.clone()).collect();
    report.smspec_failures = statuses.into_iter().filter(|s| !s.ok).collect();
    if good.is_empty() {
        return Err(Error::InvalidInput("no SMSPEC could be regenerated".into()));
    }
    log.append(
        &StageRecord {
            stage: 2,
            name: "regenerate_smspecs".into(),
            input_checkpoint: Some(syn_id.clone()),
            output_checkpoint: None,
            steps: 0,
            utterances: good.len(),
            wall_secs: t.elapsed().as_secs_f64(),
        },
        &mut report,
    )?;

    // Stage 3: enhancer.
    let t = Instant::now();
    let base_se_id = base.id(NetworkKind::Enhancer)?;
    let steps = plan.enhancer.steps;
    check_smspec_provenance(store, &good, &syn_id)?;
    let se = TacoSe::from_checkpoints(pr.clone(), pr_ck, se_ck)?;
    let se_id = if steps == 0 {
        copy_checkpoint(base, out, NetworkKind::Enhancer)?
    } else {
        train_taco_se(&se, &load_se_utterances(store, &good)?, &plan.enhancer)?;
        se.to_checkpoint(features, se_ck.header.step + steps, vec![base_se_id.clone(), syn_id.clone()])?
            .save(&out.path(NetworkKind::Enhancer))?
    };
    log.append(
        &StageRecord {
            stage: 3,
            name: "enhancer".into(),
            input_checkpoint: Some(base_se_id),
            output_checkpoint: Some(se_id),
            steps,
            utterances: good.len(),
            wall_secs: t.elapsed().as_secs_f64(),
        },
        &mut report,
    )?;

    // Stage 4: vocoder.
    let t = Instant::now();
    let base_voc_id = base.id(NetworkKind::Vocoder)?;
    let steps = plan.vocoder.steps;
    let voc_id = if steps == 0 {
        copy_checkpoint(base, out, NetworkKind::Vocoder)?
    } else {
        let voc = VocoderModel::from_checkpoint(voc_ck)?;
        let vc = voc.config();
        let mut data = Vec::with_capacity(target.len());
        for rec in &target.records {
            let mel = store.read_mel(&store.mel_path(&rec.utt_id))?;
            let mel = match plan.vocoder_input {
                VocoderInput::True => mel,
                VocoderInput::Enhanced => {
                    if !good.contains(&rec.utt_id) {
                        warn!("{}: no SMSPEC, skipped for vocoder fine-tuning", rec.utt_id);
                        continue;
                    }
                    se.enhance(&store.read_mel(&store.smspec_path(&rec.utt_id))?)?
                }
            };
            let w = store.read_audio(target, rec)?;
            data.push(prepare_pair(&rec.utt_id, &w, mel, vc.hop(), vc.classes)?);
        }
        train_vocoder(&voc, &data, &plan.vocoder)?;
        let mut ck = voc.to_checkpoint(features, voc_ck.header.step + steps)?;
        ck.header.parents = vec![base_voc_id.clone()];
        ck.save(&out.path(NetworkKind::Vocoder))?
    };
    log.append(
        &StageRecord {
            stage: 4,
            name: "vocoder".into(),
            input_checkpoint: Some(base_voc_id),
            output_checkpoint: Some(voc_id),
            steps,
            utterances: target.len(),
            wall_secs: t.elapsed().as_secs_f64(),
        },
        &mut report,
    )?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_plan_step_counts() {
        let p = AdaptationPlan::default();
        assert_eq!(p.synthesizer.steps, 10_000);
        assert_eq!(p.enhancer.steps, 10_000);
        assert_eq!(p.vocoder.steps, 20_000);
        assert_eq!(p.vocoder_input, VocoderInput::True);
        // The sampling decay is restarted for the fine-tune.
        assert_eq!(p.synthesizer.schedule.rate_at(0), 1.0);
        assert_eq!(p.synthesizer.schedule.decay_steps, 10_000);
        p.validate().unwrap();
    }

    #[test]
    fn zero_batch_is_rejected() {
        let mut p = AdaptationPlan::with_steps(0, 0, 0);
        p.vocoder.batch_size = 0;
        assert!(p.validate().is_err());
    }

    #[test]
    fn missing_base_checkpoint() {
        let dir = tempfile::tempdir().unwrap();
        let store = FeatureStore::new(dir.path().join("f"), Default::default()).unwrap();
        let m = Manifest::new(vec![], dir.path()).unwrap();
        let err = adapt(
            &CheckpointSet::new(dir.path().join("base")),
            &CheckpointSet::new(dir.path().join("out")),
            &m,
            &store,
            &AdaptationPlan::default(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::MissingCheckpoint(_)));
    }
}
