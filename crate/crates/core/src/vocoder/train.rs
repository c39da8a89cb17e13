use candle_core::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{cond_tensor, VocoderModel};
use crate::error::{Error, Result};
use crate::features::{mu_law_encode, MelSpectrogram, Waveform};
use crate::nn::{Adam, DEVICE};
use crate::training::{BatchSampler, TrainReport};

/// Mu-law codes paired with the mel frames they were cut to.
#[derive(Debug, Clone)]
pub struct VocoderExample {
    pub id: String,
    pub codes: Vec<u8>,
    pub mel: MelSpectrogram,
}

impl VocoderExample {
    pub fn new(id: String, codes: Vec<u8>, mel: MelSpectrogram, hop: usize) -> Result<Self> {
        if codes.len() != mel.n_frames() * hop {
            return Err(Error::Alignment(format!(
                "{id}: {} codes for {} frames of {hop} samples",
                codes.len(),
                mel.n_frames()
            )));
        }
        Ok(Self { id, codes, mel })
    }
}

/// Zero-pads or trims `w` to `n_frames * hop` samples and mu-law encodes it.
/// The waveform must be one that produced `mel` (frame count
/// `floor(len / hop) + 1`).
pub fn prepare_pair(id: &str, w: &Waveform, mel: MelSpectrogram, hop: usize, classes: usize) -> Result<VocoderExample> {
    let expected = w.len() / hop + 1;
    if mel.n_frames() != expected {
        return Err(Error::Alignment(format!(
            "{id}: {} samples give {expected} frames, mel has {}",
            w.len(),
            mel.n_frames()
        )));
    }
    let mut samples = w.samples.clone();
    samples.resize(mel.n_frames() * hop, 0.0);
    let codes = mu_law_encode(&Waveform::new(samples, w.sample_rate)?, classes)?.codes;
    VocoderExample::new(id.to_string(), codes, mel, hop)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VocoderTrainConfig {
    pub steps: usize,
    pub learning_rate: f64,
    /// Crops per update.
    pub batch_size: usize,
    /// Samples scored per crop; receptive-field context is added on the left.
    pub crop_samples: usize,
    pub seed: u64,
}

impl Default for VocoderTrainConfig {
    fn default() -> Self {
        Self {
            steps: 20_000,
            learning_rate: 0.001,
            batch_size: 2,
            crop_samples: 2048,
            seed: 0,
        }
    }
}

/// Codes and conditioning with the silent lead-in prepended: `lead_in`
/// silence codes whose conditioning rows are zero. Generation warms up on the
/// same lead-in, so the first real sample sees the context it was trained on.
fn with_lead_in(model: &VocoderModel, codes: &[u8], cond: &Tensor) -> Result<(Vec<u8>, Tensor)> {
    let p = model.lead_in();
    let mut full = vec![model.silence_code(); p];
    full.extend_from_slice(codes);
    let cond = Tensor::cat(&[Tensor::zeros((p, cond.dim(1)?), cond.dtype(), &DEVICE)?, cond.clone()], 0)?;
    Ok((full, cond))
}

/// Cross-entropy of predicting `codes[start..start + len]` (lead-in
/// coordinates) with a full receptive field of context.
fn crop_loss(model: &VocoderModel, codes: &[u8], cond: &Tensor, start: usize, len: usize) -> Result<Tensor> {
    let from = start - model.lead_in();
    let history = if from == 0 { model.silence_code() } else { codes[from - 1] };
    let window = &codes[from..start + len];
    let logits = model.logits(window, history, &cond.narrow(0, from, window.len())?)?;
    let logits = logits.narrow(0, start - from, len)?;
    let targets: Vec<u32> = codes[start..start + len].iter().map(|&c| c as u32).collect();
    let targets = Tensor::from_vec(targets, len, &DEVICE)?;
    Ok(candle_nn::loss::cross_entropy(&logits, &targets)?)
}

fn conditioning(model: &VocoderModel, mel: &MelSpectrogram) -> Result<Tensor> {
    let t = Tensor::from_slice(mel.frames.as_slice(), (mel.n_frames(), mel.n_mels()), &DEVICE)?;
    model.upsample_tensor(&t)
}

/// Teacher-forced next-sample training on random crops.
pub fn train_vocoder(model: &VocoderModel, data: &[VocoderExample], cfg: &VocoderTrainConfig) -> Result<TrainReport> {
    if data.is_empty() {
        return Err(Error::InvalidInput("no vocoder training utterances".into()));
    }
    for ex in data {
        model.check_mel(&ex.mel)?;
    }
    let mut opt = Adam::new(model.store.trainable_vars(), cfg.learning_rate, cfg.steps)?;
    let mut sampler = BatchSampler::new(data.len(), cfg.seed);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xc0de);
    let mut report = TrainReport::default();
    for step in 0..cfg.steps {
        let mut total: Option<Tensor> = None;
        let batch = sampler.next_batch(cfg.batch_size);
        for &i in &batch {
            let ex = &data[i];
            let (codes, cond) = with_lead_in(model, &ex.codes, &conditioning(model, &ex.mel)?)?;
            // Crops may overhang either end, so every sample is scored equally often.
            let (p, n) = (model.lead_in(), ex.codes.len());
            let len = cfg.crop_samples.min(n) as i64;
            let first = rng.gen_range(0..n as i64 + len - 1) - (len - 1);
            let start = p + first.max(0) as usize;
            let end = p + (first + len).min(n as i64) as usize;
            let loss = crop_loss(model, &codes, &cond, start, end - start)?;
            total = Some(match total {
                Some(t) => (t + loss)?,
                None => loss,
            });
        }
        let loss = (total.expect("non-empty batch") / batch.len() as f64)?;
        report.losses.push(loss.to_scalar::<f32>()?);
        opt.backward_step(&loss, step)?;
    }
    Ok(report)
}

/// Teacher-forced loss and next-sample accuracy over a whole utterance.
pub fn teacher_forced_accuracy(model: &VocoderModel, ex: &VocoderExample) -> Result<(f32, f64)> {
    model.check_mel(&ex.mel)?;
    let cond = cond_tensor(&model.upsample_conditioning(&ex.mel)?)?;
    let (codes, cond) = with_lead_in(model, &ex.codes, &cond)?;
    let logits = model.logits(&codes, model.silence_code(), &cond)?;
    let logits = logits.narrow(0, model.lead_in(), ex.codes.len())?;
    let targets = Tensor::from_vec(
        ex.codes.iter().map(|&c| c as u32).collect::<Vec<_>>(),
        ex.codes.len(),
        &DEVICE,
    )?;
    let loss = candle_nn::loss::cross_entropy(&logits, &targets)?.to_scalar::<f32>()?;
    let pred = logits.argmax(1)?.to_vec1::<u32>()?;
    let hits = pred
        .iter()
        .zip(&ex.codes)
        .filter(|(p, c)| **p == **c as u32)
        .count();
    Ok((loss, hits as f64 / ex.codes.len() as f64))
}
