use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tacovc::adaptation::{adapt, check_smspec_provenance, synthesizer_tag, VocoderInput};
use tacovc::checkpoint::{Checkpoint, CheckpointSet, NetworkKind};
use tacovc::config::PipelineConfig;
use tacovc::enhancer::{build_taco_se, generate_smspec_corpus, load_se_utterances, train_taco_se};
use tacovc::features::resample;
use tacovc::features::wav::{read_wav, write_wav};
use tacovc::manifest::Manifest;
use tacovc::pipeline::{output_name, ConvertOptions, Converter, VocoderKind};
use tacovc::recognizer::{
    corpus_per, greedy_decode, train_pr, PhoneInventory, PhonemeSequence, PrExample, PrModel,
};
use tacovc::store::FeatureStore;
use tacovc::synthesizer::{train_synthesizer, ScheduledSampling, SynthExample, SynthModel};
use tacovc::toy::{write_toy_corpus, ToySpeaker};
use tacovc::vocoder::{prepare_pair, train_vocoder, GenerateMode, VocoderModel};
use tacovc::{Error, Result};

use crate::{Cli, Global, Verb, VocoderArg, VocoderInputArg};

struct Ctx {
    cfg: PipelineConfig,
    set: CheckpointSet,
    store: FeatureStore,
}

impl Ctx {
    fn new(g: &Global) -> Result<Self> {
        let cfg = g.pipeline_config()?;
        cfg.validate()?;
        let dir = g
            .checkpoint_dir
            .clone()
            .or_else(|| cfg.checkpoint_dir.clone())
            .unwrap_or_else(|| PathBuf::from("checkpoints"));
        let features = g.feature_dir.clone().unwrap_or_else(|| dir.join("features"));
        Ok(Self {
            store: FeatureStore::new(features, cfg.features.clone())?,
            set: CheckpointSet::new(dir),
            cfg,
        })
    }

    /// Loads a checkpoint and checks it was trained on this pipeline's features.
    fn load(&self, kind: NetworkKind) -> Result<(Checkpoint, String)> {
        self.set.require(&[kind])?;
        let ck = self.set.load(kind)?;
        if ck.header.feature_hash != self.cfg.features.hash() {
            return Err(Error::ConfigMismatch(format!(
                "{} uses feature recipe {}, this pipeline uses {}",
                self.set.path(kind).display(),
                ck.header.feature_hash,
                self.cfg.features.hash()
            )));
        }
        let id = ck.id()?;
        Ok((ck, id))
    }

    fn save(&self, ck: &Checkpoint) -> Result<String> {
        std::fs::create_dir_all(&self.set.dir)?;
        ck.save(&self.set.path(ck.header.kind))
    }

    /// Extracts features for records that have none yet.
    fn ensure_features(&self, m: &Manifest) -> Result<()> {
        let missing: Vec<_> = m
            .records
            .iter()
            .filter(|r| !self.store.mel_path(&r.utt_id).is_file() || !self.store.linear_path(&r.utt_id).is_file())
            .cloned()
            .collect();
        if !missing.is_empty() {
            self.store.extract_manifest(&Manifest::new(missing, m.base_dir())?)?;
        }
        Ok(())
    }
}

fn load_manifest(path: &Path) -> Result<Manifest> {
    let m = Manifest::load(path)?;
    if m.is_empty() {
        return Err(Error::InvalidInput(format!("{} has no records", path.display())));
    }
    Ok(m)
}

fn ids(m: &Manifest) -> Vec<String> {
    m.records.iter().map(|r| r.utt_id.clone()).collect()
}

pub fn run(cli: &Cli) -> Result<String> {
    let g = &cli.global;
    let out = match &cli.verb {
        Verb::MakeToyCorpus { out, utterances } => make_toy_corpus(g, out, *utterances)?,
        Verb::Features { manifest } => {
            let ctx = Ctx::new(g)?;
            let n = ctx.store.extract_manifest(&load_manifest(manifest)?)?;
            json!({ "utterances": n, "feature_hash": ctx.cfg.features.hash() })
        }
        Verb::TrainPr { manifest, steps } => train_pr_verb(&Ctx::new(g)?, manifest, *steps)?,
        Verb::TrainSyn { manifest, steps } => train_syn_verb(&Ctx::new(g)?, manifest, *steps)?,
        Verb::GenSmspec { manifest } => gen_smspec_verb(&Ctx::new(g)?, manifest)?,
        Verb::TrainSe { manifest, steps } => train_se_verb(&Ctx::new(g)?, manifest, *steps)?,
        Verb::TrainVocoder { manifest, steps } => train_vocoder_verb(&Ctx::new(g)?, manifest, *steps)?,
        Verb::Adapt {
            manifest,
            out,
            syn_steps,
            se_steps,
            vocoder_steps,
            vocoder_input,
        } => {
            let ctx = Ctx::new(g)?;
            let mut plan = ctx.cfg.adaptation.clone();
            if let Some(s) = syn_steps {
                plan.synthesizer.steps = *s;
                plan.synthesizer.schedule = ScheduledSampling::new(*s);
            }
            if let Some(s) = se_steps {
                plan.enhancer.steps = *s;
                plan.enhancer.schedule = ScheduledSampling::new(*s);
            }
            if let Some(s) = vocoder_steps {
                plan.vocoder.steps = *s;
            }
            if let Some(v) = vocoder_input {
                plan.vocoder_input = match v {
                    VocoderInputArg::True => VocoderInput::True,
                    VocoderInputArg::Enhanced => VocoderInput::Enhanced,
                };
            }
            let report = adapt(&ctx.set, &CheckpointSet::new(out), &load_manifest(manifest)?, &ctx.store, &plan)?;
            json!({ "stages": report.stages, "smspec_failures": report.smspec_failures })
        }
        Verb::Convert {
            input,
            manifest,
            out,
            source_speaker,
            target_speaker,
            no_enhance,
            vocoder,
            sample,
            griffin_lim_iters,
        } => {
            let ctx = Ctx::new(g)?;
            let opts = ConvertOptions {
                enhance: !no_enhance,
                vocoder: match vocoder {
                    VocoderArg::Wavenet => VocoderKind::Neural(if *sample {
                        GenerateMode::Sample
                    } else {
                        GenerateMode::Argmax
                    }),
                    VocoderArg::Griffinlim => VocoderKind::GriffinLim {
                        iters: *griffin_lim_iters,
                    },
                },
                seed: g.seed,
            };
            let jobs: Vec<(String, String, PathBuf)> = match (input, manifest) {
                (Some(path), _) => {
                    let stem = path
                        .file_stem()
                        .and_then(|s| s.to_str())
                        .ok_or_else(|| Error::InvalidInput(format!("bad input path {}", path.display())))?;
                    vec![(stem.to_string(), source_speaker.clone(), path.clone())]
                }
                (None, Some(m)) => {
                    let m = load_manifest(m)?;
                    m.records
                        .iter()
                        .map(|r| (r.utt_id.clone(), r.speaker.clone(), m.audio_path(r)))
                        .collect()
                }
                (None, None) => return Err(Error::InvalidInput("give --input or --manifest".into())),
            };
            convert_verb(&ctx, opts, &jobs, out, target_speaker)?
        }
        Verb::Recognize { manifest, out } => recognize_verb(&Ctx::new(g)?, manifest, out)?,
        Verb::EvalPer { reference, hyp } => return eval_per(reference, hyp).map(|p| format!("{p:?}")),
    };
    Ok(out.to_string())
}

fn make_toy_corpus(g: &Global, out: &Path, n: usize) -> Result<Value> {
    let cfg = g.pipeline_config()?;
    let speakers = [ToySpeaker::a(), ToySpeaker::b()];
    let m = write_toy_corpus(out, &speakers, n, g.seed, &cfg.features)?;
    let mut files = vec![out.join("manifest.jsonl")];
    for spk in &speakers {
        let path = out.join(format!("{}.jsonl", spk.id));
        m.for_speaker(&spk.id).save(&path)?;
        files.push(path);
    }
    Ok(json!({ "utterances": m.len(), "manifests": files }))
}

fn train_pr_verb(ctx: &Ctx, manifest: &Path, steps: Option<usize>) -> Result<Value> {
    let m = load_manifest(manifest)?;
    m.require_transcripts()?;
    ctx.ensure_features(&m)?;
    let inv = PhoneInventory::timit();
    let data = m
        .records
        .iter()
        .map(|r| {
            Ok(PrExample {
                id: r.utt_id.clone(),
                mel: ctx.store.read_mel(&ctx.store.mel_path(&r.utt_id))?,
                labels: inv.parse(r.transcript.as_deref().unwrap_or_default())?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut tc = ctx.cfg.training.recognizer.clone();
    if let Some(s) = steps {
        tc.steps = s;
    }
    let model = PrModel::new(ctx.cfg.recognizer.clone(), ctx.cfg.seed)?;
    let report = train_pr(&model, &data, &tc)?;
    let pairs = data
        .iter()
        .map(|ex| {
            let hyp = greedy_decode(&model.extract_ppg(&ex.mel)?, inv.blank());
            Ok((PhonemeSequence::new(ex.labels.clone(), inv)?, hyp))
        })
        .collect::<Result<Vec<_>>>()?;
    let id = ctx.save(&model.to_checkpoint(&ctx.cfg.features, tc.steps)?)?;
    Ok(json!({
        "checkpoint": id,
        "steps": tc.steps,
        "final_loss": report.final_loss(),
        "train_per": corpus_per(&pairs, inv)?,
        "skipped": report.skipped.len(),
    }))
}

fn train_syn_verb(ctx: &Ctx, manifest: &Path, steps: Option<usize>) -> Result<Value> {
    let m = load_manifest(manifest)?;
    ctx.ensure_features(&m)?;
    let (pr_ck, pr_id) = ctx.load(NetworkKind::Recognizer)?;
    let pr = PrModel::from_checkpoint(&pr_ck)?;
    let data = ids(&m)
        .into_iter()
        .map(|id| {
            let mel = ctx.store.read_mel(&ctx.store.mel_path(&id))?;
            let linear = ctx.store.read_linear(&ctx.store.linear_path(&id))?;
            SynthExample::new(id, pr.extract_ppg(&mel)?, mel, linear)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut tc = ctx.cfg.training.synthesizer.clone();
    if let Some(s) = steps {
        tc.steps = s;
        tc.schedule = ScheduledSampling::new(s);
    }
    let model = SynthModel::new(ctx.cfg.synthesizer.clone(), ctx.cfg.seed)?;
    let report = train_synthesizer(&model, &data, &tc)?;
    let ck = model.to_checkpoint(NetworkKind::Synthesizer, &ctx.cfg.features, tc.steps, vec![pr_id])?;
    Ok(json!({ "checkpoint": ctx.save(&ck)?, "steps": tc.steps, "final_loss": report.final_loss() }))
}

fn gen_smspec_verb(ctx: &Ctx, manifest: &Path) -> Result<Value> {
    let m = load_manifest(manifest)?;
    ctx.ensure_features(&m)?;
    let (pr_ck, _) = ctx.load(NetworkKind::Recognizer)?;
    let (syn_ck, syn_id) = ctx.load(NetworkKind::Synthesizer)?;
    let pr = PrModel::from_checkpoint(&pr_ck)?;
    let syn = SynthModel::from_checkpoint(&syn_ck, NetworkKind::Synthesizer)?;
    let statuses = generate_smspec_corpus(&pr, &syn, &ctx.store, &ids(&m), &[synthesizer_tag(&syn_id)]);
    let written = statuses.iter().filter(|s| s.ok).count();
    if written == 0 {
        return Err(Error::InvalidInput("no SMSPEC could be generated".into()));
    }
    let failed: Vec<_> = statuses.into_iter().filter(|s| !s.ok).collect();
    Ok(json!({ "written": written, "failed": failed, "synthesizer": syn_id }))
}

fn train_se_verb(ctx: &Ctx, manifest: &Path, steps: Option<usize>) -> Result<Value> {
    let m = load_manifest(manifest)?;
    let ids = ids(&m);
    let (pr_ck, pr_id) = ctx.load(NetworkKind::Recognizer)?;
    let (syn_ck, syn_id) = ctx.load(NetworkKind::Synthesizer)?;
    for id in &ids {
        let p = ctx.store.smspec_path(id);
        if !p.is_file() {
            return Err(Error::MissingFeature(p));
        }
    }
    check_smspec_provenance(&ctx.store, &ids, &syn_id)?;
    let pr = Arc::new(PrModel::from_checkpoint(&pr_ck)?);
    let syn = SynthModel::from_checkpoint(&syn_ck, NetworkKind::Synthesizer)?;
    let se = build_taco_se(pr, &syn)?;
    let mut tc = ctx.cfg.training.enhancer.clone();
    if let Some(s) = steps {
        tc.steps = s;
        tc.schedule = ScheduledSampling::new(s);
    }
    let report = train_taco_se(&se, &load_se_utterances(&ctx.store, &ids)?, &tc)?;
    let ck = se.to_checkpoint(&ctx.cfg.features, tc.steps, vec![pr_id, syn_id])?;
    Ok(json!({ "checkpoint": ctx.save(&ck)?, "steps": tc.steps, "final_loss": report.final_loss() }))
}

fn train_vocoder_verb(ctx: &Ctx, manifest: &Path, steps: Option<usize>) -> Result<Value> {
    let m = load_manifest(manifest)?;
    ctx.ensure_features(&m)?;
    let model = VocoderModel::new(ctx.cfg.vocoder.clone(), ctx.cfg.seed)?;
    let (hop, classes) = (model.config().hop(), model.config().classes);
    let data = m
        .records
        .iter()
        .map(|r| {
            let w = ctx.store.read_audio(&m, r)?;
            let mel = ctx.store.read_mel(&ctx.store.mel_path(&r.utt_id))?;
            prepare_pair(&r.utt_id, &w, mel, hop, classes)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut tc = ctx.cfg.training.vocoder.clone();
    if let Some(s) = steps {
        tc.steps = s;
    }
    let report = train_vocoder(&model, &data, &tc)?;
    let ck = model.to_checkpoint(&ctx.cfg.features, tc.steps)?;
    Ok(json!({ "checkpoint": ctx.save(&ck)?, "steps": tc.steps, "final_loss": report.final_loss() }))
}

fn convert_verb(
    ctx: &Ctx,
    opts: ConvertOptions,
    jobs: &[(String, String, PathBuf)],
    out: &Path,
    target: &str,
) -> Result<Value> {
    let conv = Converter::load(&ctx.set, opts)?;
    std::fs::create_dir_all(out)?;
    let mut written = Vec::with_capacity(jobs.len());
    for (utt, src, path) in jobs {
        let mut w = read_wav(path)?;
        if w.sample_rate != conv.features().sample_rate {
            w = resample(&w, conv.features().sample_rate)?;
        }
        let c = conv.convert(&w)?;
        let dest = out.join(output_name(utt, src, target));
        write_wav(&dest, &c.waveform)?;
        written.push(json!({ "utt_id": utt, "output": dest, "samples": c.waveform.len() }));
    }
    Ok(json!({ "converted": written }))
}

#[derive(Debug, Serialize, Deserialize)]
struct TranscriptLine {
    utt_id: String,
    transcript: String,
}

fn read_transcripts(path: &Path) -> Result<Vec<TranscriptLine>> {
    let text = std::fs::read_to_string(path)?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Format(format!("{}:{}: {e}", path.display(), i + 1)))
        })
        .collect()
}

fn recognize_verb(ctx: &Ctx, manifest: &Path, out: &Path) -> Result<Value> {
    let m = load_manifest(manifest)?;
    ctx.ensure_features(&m)?;
    let (pr_ck, _) = ctx.load(NetworkKind::Recognizer)?;
    let pr = PrModel::from_checkpoint(&pr_ck)?;
    let inv = PhoneInventory::timit();
    let mut text = String::new();
    for id in ids(&m) {
        let ppg = pr.extract_ppg(&ctx.store.read_mel(&ctx.store.mel_path(&id))?)?;
        let line = TranscriptLine {
            transcript: inv.render(&greedy_decode(&ppg, inv.blank()).labels),
            utt_id: id,
        };
        text.push_str(&serde_json::to_string(&line)?);
        text.push('\n');
    }
    tacovc::io::write_atomic(out, text.as_bytes())?;
    Ok(json!({ "utterances": m.len(), "output": out }))
}

fn eval_per(reference: &Path, hyp: &Path) -> Result<f64> {
    let inv = PhoneInventory::timit();
    let hyps: HashMap<String, String> = read_transcripts(hyp)?
        .into_iter()
        .map(|l| (l.utt_id, l.transcript))
        .collect();
    let pairs = read_transcripts(reference)?
        .into_iter()
        .map(|r| {
            let h = hyps
                .get(&r.utt_id)
                .ok_or_else(|| Error::InvalidInput(format!("no hypothesis for {}", r.utt_id)))?;
            Ok((
                PhonemeSequence::parse(&r.transcript, inv)?,
                PhonemeSequence {
                    labels: inv.parse(h)?,
                },
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    corpus_per(&pairs, inv)
}
