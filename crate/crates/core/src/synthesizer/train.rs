use candle_core::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::masked_l1;
use super::{DecoderFeed, ScheduledSampling, SynthModel};
use crate::error::{Error, Result};
use crate::features::{LinearSpectrogram, MelSpectrogram};
use crate::nn::{frame_mask, pad_batch, Adam, DEVICE};
use crate::recognizer::Ppg;
use crate::training::{BatchSampler, TrainReport};

/// One training pair: PPG input and the spectrograms it should produce.
#[derive(Debug, Clone)]
pub struct SynthExample {
    pub id: String,
    pub ppg: Ppg,
    pub mel: MelSpectrogram,
    pub linear: LinearSpectrogram,
}

impl SynthExample {
    pub fn new(id: String, ppg: Ppg, mel: MelSpectrogram, linear: LinearSpectrogram) -> Result<Self> {
        if ppg.n_frames() != mel.n_frames() || mel.n_frames() != linear.n_frames() {
            return Err(Error::Alignment(format!(
                "{id}: PPG has {} frames, mel {}, linear {}",
                ppg.n_frames(),
                mel.n_frames(),
                linear.n_frames()
            )));
        }
        Ok(Self { id, ppg, mel, linear })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthTrainConfig {
    pub steps: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub schedule: ScheduledSampling,
    /// Weight of the diagonal attention penalty; 0 disables it.
    #[serde(default = "default_guide")]
    pub guided_attention: f64,
}

fn default_guide() -> f64 {
    GUIDE_WEIGHT
}

/// Default diagonal-penalty weight.
pub const GUIDE_WEIGHT: f64 = 1.0;
/// Width of the diagonal band, as a fraction of both axes.
const GUIDE_WIDTH: f64 = 0.2;

impl SynthTrainConfig {
    /// `steps` updates with the sampling decay spanning all of them.
    pub fn with_steps(steps: usize) -> Self {
        Self {
            steps,
            schedule: ScheduledSampling::new(steps),
            ..Self::default()
        }
    }
}

impl Default for SynthTrainConfig {
    fn default() -> Self {
        Self {
            steps: 5000,
            learning_rate: 0.002,
            batch_size: 5,
            seed: 0,
            schedule: ScheduledSampling::new(5000),
            guided_attention: GUIDE_WEIGHT,
        }
    }
}

/// Penalty map `[steps, t_in]`: `1 - exp(-(n/N - t/T)^2 / 2g^2)`, zero on the diagonal.
/// Rows past `steps` or columns past `t_in` are zero so padding adds nothing.
pub(crate) fn guide_weights(steps: usize, t_in: usize, rows: usize, cols: usize) -> Vec<f32> {
    let mut w = vec![0.0f32; rows * cols];
    for n in 0..steps.min(rows) {
        for t in 0..t_in.min(cols) {
            let d = n as f64 / steps as f64 - t as f64 / t_in as f64;
            w[n * cols + t] = (1.0 - (-d * d / (2.0 * GUIDE_WIDTH * GUIDE_WIDTH)).exp()) as f32;
        }
    }
    w
}

/// Masked mel plus linear L1 over a batch, plus `guide` times the mean
/// off-diagonal attention mass per valid decoder step.
pub(crate) fn batch_loss(
    model: &SynthModel,
    batch: &[&SynthExample],
    feed: DecoderFeed,
    rng: Option<&mut ChaCha8Rng>,
    guide: f64,
) -> Result<Tensor> {
    let cfg = model.config();
    for ex in batch {
        model.check_ppg(&ex.ppg)?;
        if ex.mel.n_mels() != cfg.n_mels || ex.linear.frames.n_bins() != cfg.n_linear {
            return Err(Error::Shape(format!(
                "{}: targets have {}/{} bins, model expects {}/{}",
                ex.id,
                ex.mel.n_mels(),
                ex.linear.frames.n_bins(),
                cfg.n_mels,
                cfg.n_linear
            )));
        }
    }
    let items: Vec<(&[f32], usize)> = batch
        .iter()
        .map(|e| (e.ppg.frames.as_slice(), e.ppg.n_frames()))
        .collect();
    let (x, lens) = pad_batch(&items, cfg.n_ppg)?;
    let out_len = cfg.decoder_steps(x.dim(1)?) * cfg.reduction;
    let padded = |frames: Vec<(&[f32], usize)>, bins: usize| -> Result<Tensor> {
        let (t, _) = pad_batch(&frames, bins)?;
        let extra = out_len - t.dim(1)?;
        Ok(t.pad_with_zeros(1, 0, extra)?)
    };
    let mel_t = padded(
        batch.iter().map(|e| (e.mel.frames.as_slice(), e.mel.n_frames())).collect(),
        cfg.n_mels,
    )?;
    let lin_t = padded(
        batch
            .iter()
            .map(|e| (e.linear.frames.as_slice(), e.linear.n_frames()))
            .collect(),
        cfg.n_linear,
    )?;
    let fwd = model.forward(&x, &lens, Some(&mel_t), feed, true, rng)?;
    let mask = frame_mask(&lens, out_len)?.transpose(1, 2)?;
    let l1 = (masked_l1(&fwd.mel, &mel_t, &mask)? + masked_l1(&fwd.linear, &lin_t, &mask)?)?;
    if guide == 0.0 {
        return Ok(l1);
    }
    let (rows, cols) = (fwd.alignments.len(), x.dim(1)?);
    let mut w = Vec::with_capacity(batch.len() * rows * cols);
    let mut valid_steps = 0;
    for &len in &lens {
        let steps = cfg.decoder_steps(len);
        valid_steps += steps;
        w.extend(guide_weights(steps, len, rows, cols));
    }
    let w = Tensor::from_vec(w, (batch.len(), rows, cols), &DEVICE)?;
    let align = Tensor::stack(&fwd.alignments, 1)?;
    let penalty = ((align * w)?.sum_all()? / valid_steps as f64)?;
    Ok((l1 + (penalty * guide)?)?)
}

/// Optimizer state plus schedule position for one synthesizer.
pub struct SynthTrainer<'a> {
    model: &'a SynthModel,
    opt: Adam,
    rng: ChaCha8Rng,
    cfg: SynthTrainConfig,
    step: usize,
}

impl<'a> SynthTrainer<'a> {
    /// `start_step` resumes the learning-rate and sampling schedules.
    pub fn new(model: &'a SynthModel, cfg: SynthTrainConfig, start_step: usize) -> Result<Self> {
        cfg.schedule.validate()?;
        Ok(Self {
            opt: Adam::new(model.store().trainable_vars(), cfg.learning_rate, cfg.steps)?,
            rng: ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5e5e),
            model,
            cfg,
            step: start_step,
        })
    }

    pub fn step(&self) -> usize {
        self.step
    }

    pub fn sampling_rate(&self) -> f64 {
        self.cfg.schedule.rate_at(self.step)
    }

    pub fn train_step(&mut self, batch: &[&SynthExample]) -> Result<f32> {
        let feed = DecoderFeed::Scheduled(self.sampling_rate());
        let loss = batch_loss(
            self.model,
            batch,
            feed,
            Some(&mut self.rng),
            self.cfg.guided_attention,
        )?;
        let value = loss.to_scalar::<f32>()?;
        self.opt.backward_step(&loss, self.step)?;
        self.step += 1;
        Ok(value)
    }
}

/// Trains for `cfg.steps` minibatches drawn with a seeded epoch shuffle.
pub fn train_synthesizer(
    model: &SynthModel,
    data: &[SynthExample],
    cfg: &SynthTrainConfig,
) -> Result<TrainReport> {
    if data.is_empty() {
        return Err(Error::InvalidInput("no synthesizer training examples".into()));
    }
    let mut trainer = SynthTrainer::new(model, cfg.clone(), 0)?;
    let mut sampler = BatchSampler::new(data.len(), cfg.seed);
    let mut report = TrainReport::default();
    for _ in 0..cfg.steps {
        let batch: Vec<&SynthExample> = sampler
            .next_batch(cfg.batch_size)
            .into_iter()
            .map(|i| &data[i])
            .collect();
        report.losses.push(trainer.train_step(&batch)?);
    }
    Ok(report)
}
