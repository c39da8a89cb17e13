//! PPG-to-spectrogram synthesizer: CBHG encoder, location-sensitive attention,
//! autoregressive decoder emitting `r` mel frames per step and a CBHG postnet
//! that predicts the linear spectrogram.

mod loss;
mod schedule;
mod train;

use candle_core::{Tensor, D};
use candle_nn::ops::softmax;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{Checkpoint, CheckpointHeader, NetworkKind};
use crate::error::{Error, Result};
use crate::features::{FeatureConfig, Frames, LinearSpectrogram, MelRole, MelSpectrogram};
use crate::nn::{
    attention_mask, frame_mask, pad_batch, Cbhg, CbhgConfig, Conv1d, Gru, Linear, ParamStore,
    DEVICE,
};
use crate::recognizer::Ppg;

pub use loss::taco_loss;
pub use schedule::ScheduledSampling;
pub use train::{train_synthesizer, SynthExample, SynthTrainConfig, SynthTrainer, GUIDE_WEIGHT};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_ppg: usize,
    pub n_mels: usize,
    pub n_linear: usize,
    /// Mel frames emitted per decoder step.
    pub reduction: usize,
    pub encoder_prenet: Vec<usize>,
    pub encoder: CbhgConfig,
    pub attention_dim: usize,
    pub attention_rnn: usize,
    pub location_filters: usize,
    pub location_kernel: usize,
    pub decoder_prenet: Vec<usize>,
    pub decoder_dim: usize,
    pub decoder_layers: usize,
    pub postnet: CbhgConfig,
    /// Dropout probability in both prenets while training.
    pub prenet_dropout: f32,
}

impl SynthConfig {
    /// Small widths for CPU training on toy data: encoder output 128, decoder 256.
    pub fn desk() -> Self {
        Self {
            n_ppg: 62,
            n_mels: 80,
            n_linear: 513,
            reduction: 3,
            encoder_prenet: vec![128, 64],
            encoder: CbhgConfig {
                bank_size: 4,
                bank_channels: 32,
                projection_channels: 64,
                highway_layers: 2,
                gru_hidden: 64,
            },
            attention_dim: 128,
            attention_rnn: 128,
            location_filters: 8,
            location_kernel: 15,
            decoder_prenet: vec![128, 64],
            decoder_dim: 256,
            decoder_layers: 2,
            postnet: CbhgConfig {
                bank_size: 4,
                bank_channels: 32,
                projection_channels: 128,
                highway_layers: 2,
                gru_hidden: 64,
            },
            prenet_dropout: 0.0,
        }
    }

    pub fn paper() -> Self {
        Self {
            encoder_prenet: vec![256, 128],
            encoder: CbhgConfig {
                bank_size: 16,
                bank_channels: 128,
                projection_channels: 128,
                highway_layers: 4,
                gru_hidden: 128,
            },
            attention_dim: 256,
            attention_rnn: 256,
            location_filters: 32,
            location_kernel: 31,
            decoder_prenet: vec![256, 128],
            decoder_dim: 256,
            decoder_layers: 2,
            postnet: CbhgConfig {
                bank_size: 8,
                bank_channels: 128,
                projection_channels: 256,
                highway_layers: 4,
                gru_hidden: 128,
            },
            prenet_dropout: 0.5,
            ..Self::desk()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.reduction == 0 {
            return bad("reduction factor must be at least 1");
        }
        if self.encoder_prenet.is_empty() || self.decoder_prenet.is_empty() {
            return bad("prenets need at least one layer");
        }
        if self.decoder_layers == 0 {
            return bad("decoder needs at least one recurrent layer");
        }
        if self.location_kernel % 2 == 0 {
            return bad("location kernel must be odd");
        }
        if !(0.0..1.0).contains(&self.prenet_dropout) {
            return bad("prenet dropout must be in [0, 1)");
        }
        if self.encoder.bank_size == 0 || self.postnet.bank_size == 0 {
            return bad("CBHG bank needs at least one kernel");
        }
        Ok(())
    }

    pub fn encoder_dim(&self) -> usize {
        2 * self.encoder.gru_hidden
    }

    /// Decoder steps needed for `frames` output frames.
    pub fn decoder_steps(&self, frames: usize) -> usize {
        frames.div_ceil(self.reduction)
    }
}

/// Which previous frame the decoder sees during training.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DecoderFeed {
    TeacherForcing,
    /// Each (utterance, step) independently uses the true frame with this probability.
    Scheduled(f64),
    FreeRunning,
}

#[derive(Debug, Clone)]
struct Prenet {
    layers: Vec<Linear>,
}

impl Prenet {
    fn new(s: &crate::nn::Scope, d_in: usize, sizes: &[usize]) -> Result<Self> {
        let mut d = d_in;
        let mut layers = Vec::new();
        for (i, &n) in sizes.iter().enumerate() {
            layers.push(Linear::new(&s.pp(format!("fc{i}")), d, n)?);
            d = n;
        }
        Ok(Self { layers })
    }

    fn forward(&self, x: &Tensor, dropout: f32, rng: Option<&mut ChaCha8Rng>) -> Result<Tensor> {
        let mut x = x.clone();
        let mut rng = rng;
        for l in &self.layers {
            x = l.forward(&x)?.relu()?;
            if let (true, Some(r)) = (dropout > 0.0, rng.as_deref_mut()) {
                x = apply_dropout(&x, dropout, r)?;
            }
        }
        Ok(x)
    }
}

fn apply_dropout(x: &Tensor, p: f32, rng: &mut ChaCha8Rng) -> Result<Tensor> {
    let keep = 1.0 - p;
    let n = x.elem_count();
    let mask: Vec<f32> = (0..n)
        .map(|_| if rng.gen::<f32>() < keep { 1.0 / keep } else { 0.0 })
        .collect();
    Ok((x * Tensor::from_vec(mask, x.dims(), &DEVICE)?)?)
}

#[derive(Debug, Clone)]
struct Attention {
    key: Linear,
    query: Linear,
    location_conv: Conv1d,
    location_proj: Linear,
    v: Linear,
}

impl Attention {
    fn new(s: &crate::nn::Scope, cfg: &SynthConfig) -> Result<Self> {
        Ok(Self {
            key: Linear::no_bias(&s.pp("key"), cfg.encoder_dim(), cfg.attention_dim)?,
            query: Linear::no_bias(&s.pp("query"), cfg.attention_rnn, cfg.attention_dim)?,
            location_conv: Conv1d::same(
                &s.pp("location_conv"),
                2,
                cfg.location_filters,
                cfg.location_kernel,
            )?,
            location_proj: Linear::no_bias(
                &s.pp("location_proj"),
                cfg.location_filters,
                cfg.attention_dim,
            )?,
            v: Linear::no_bias(&s.pp("v"), cfg.attention_dim, 1)?,
        })
    }

    /// Returns the alignment `[B, T]`. `prev_and_cum` is `[B, 2, T]`.
    fn align(
        &self,
        keys: &Tensor,
        query_state: &Tensor,
        prev_and_cum: &Tensor,
        mask: &Tensor,
    ) -> Result<Tensor> {
        let q = self.query.forward(query_state)?.unsqueeze(1)?;
        let loc = self
            .location_proj
            .forward(&self.location_conv.forward(prev_and_cum)?.transpose(1, 2)?)?;
        let e = keys.broadcast_add(&q)?.add(&loc)?.tanh()?;
        let energies = self.v.forward(&e)?.squeeze(2)?.add(mask)?;
        Ok(softmax(&energies, D::Minus1)?)
    }
}

/// The synthesizer network `S(·)`.
#[derive(Debug, Clone)]
pub struct SynthModel {
    cfg: SynthConfig,
    store: ParamStore,
    encoder_prenet: Prenet,
    encoder: Cbhg,
    attention: Attention,
    attention_rnn: Gru,
    decoder_prenet: Prenet,
    decoder_in: Linear,
    decoder_rnns: Vec<Gru>,
    frame_proj: Linear,
    postnet: Cbhg,
    linear_proj: Linear,
}

/// Output of [`SynthModel::synthesize`].
#[derive(Debug, Clone)]
pub struct Synthesis {
    pub mel: MelSpectrogram,
    pub linear: LinearSpectrogram,
    /// Attention weights, one row per decoder step over the input frames.
    pub alignment: Frames,
}

pub(crate) struct Forward {
    /// `[B, steps * r, n_mels]`, unclamped.
    pub mel: Tensor,
    /// `[B, steps * r, n_linear]`.
    pub linear: Tensor,
    /// Per decoder step, `[B, T_in]`.
    pub alignments: Vec<Tensor>,
}

impl SynthModel {
    pub fn new(cfg: SynthConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let store = ParamStore::new(seed);
        let root = store.root();
        let enc_pre_out = *cfg.encoder_prenet.last().unwrap();
        let dec_pre_out = *cfg.decoder_prenet.last().unwrap();
        let e = cfg.encoder_dim();
        let decoder_rnns = (0..cfg.decoder_layers)
            .map(|i| Gru::new(&root.pp(format!("decoder_rnn{i}")), cfg.decoder_dim, cfg.decoder_dim))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            encoder_prenet: Prenet::new(&root.pp("encoder_prenet"), cfg.n_ppg, &cfg.encoder_prenet)?,
            encoder: Cbhg::new(&root.pp("encoder"), enc_pre_out, &cfg.encoder)?,
            attention: Attention::new(&root.pp("attention"), &cfg)?,
            attention_rnn: Gru::new(&root.pp("attention_rnn"), dec_pre_out + e, cfg.attention_rnn)?,
            decoder_prenet: Prenet::new(&root.pp("decoder_prenet"), cfg.n_mels, &cfg.decoder_prenet)?,
            decoder_in: Linear::new(&root.pp("decoder_in"), cfg.attention_rnn + e, cfg.decoder_dim)?,
            decoder_rnns,
            frame_proj: Linear::new(&root.pp("frame_proj"), cfg.decoder_dim, cfg.n_mels * cfg.reduction)?,
            postnet: Cbhg::new(&root.pp("postnet"), cfg.n_mels, &cfg.postnet)?,
            linear_proj: Linear::new(&root.pp("linear_proj"), 2 * cfg.postnet.gru_hidden, cfg.n_linear)?,
            cfg,
            store,
        })
    }

    pub fn config(&self) -> &SynthConfig {
        &self.cfg
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn checksum(&self) -> Result<String> {
        self.store.checksum()
    }

    /// Independent copy with identical weights.
    pub fn duplicate(&self) -> Result<Self> {
        let copy = Self::new(self.cfg.clone(), 0)?;
        copy.store.load(&self.store.snapshot()?)?;
        Ok(copy)
    }

    pub(crate) fn check_ppg(&self, ppg: &Ppg) -> Result<()> {
        if ppg.n_classes() != self.cfg.n_ppg {
            return Err(Error::Shape(format!(
                "synthesizer expects {} PPG classes, got {}",
                self.cfg.n_ppg,
                ppg.n_classes()
            )));
        }
        if ppg.n_frames() == 0 {
            return Err(Error::Shape("empty PPG".into()));
        }
        Ok(())
    }

    /// Full forward pass over a padded batch.
    ///
    /// `ppg` is `[B, T, n_ppg]`; `targets`, required unless `feed` is
    /// `FreeRunning`, is `[B, >= steps * r, n_mels]`.
    pub(crate) fn forward(
        &self,
        ppg: &Tensor,
        lens: &[usize],
        targets: Option<&Tensor>,
        feed: DecoderFeed,
        train: bool,
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Forward> {
        let cfg = &self.cfg;
        let (b, t_in, _) = ppg.dims3()?;
        let mask = frame_mask(lens, t_in)?;
        let dropout = if train { cfg.prenet_dropout } else { 0.0 };

        let x = self.encoder_prenet.forward(ppg, dropout, rng.as_deref_mut())?;
        let memory = self.encoder.forward(&x, &mask, train)?;
        let keys = self.attention.key.forward(&memory)?;
        let att_mask = attention_mask(lens, t_in)?;

        let steps = cfg.decoder_steps(t_in);
        let r = cfg.reduction;
        let zeros = |n: usize| Tensor::zeros((b, n), candle_core::DType::F32, &DEVICE);
        let mut prev_frame = zeros(cfg.n_mels)?;
        let mut context = zeros(cfg.encoder_dim())?;
        let mut att_h = zeros(cfg.attention_rnn)?;
        let mut dec_h: Vec<Tensor> = (0..cfg.decoder_layers)
            .map(|_| zeros(cfg.decoder_dim))
            .collect::<candle_core::Result<_>>()?;
        let mut prev_align = zeros(t_in)?;
        let mut cum_align = zeros(t_in)?;
        let mut frames = Vec::with_capacity(steps);
        let mut alignments = Vec::with_capacity(steps);

        for step in 0..steps {
            let p = self.decoder_prenet.forward(&prev_frame, dropout, rng.as_deref_mut())?;
            att_h = self.attention_rnn.step(&Tensor::cat(&[&p, &context], 1)?, &att_h)?;
            let loc_in = Tensor::stack(&[&prev_align, &cum_align], 1)?;
            let align = self.attention.align(&keys, &att_h, &loc_in, &att_mask)?;
            context = align.unsqueeze(1)?.matmul(&memory)?.squeeze(1)?;
            let mut d = self.decoder_in.forward(&Tensor::cat(&[&att_h, &context], 1)?)?;
            for (gru, h) in self.decoder_rnns.iter().zip(dec_h.iter_mut()) {
                *h = gru.step(&d, h)?;
                d = (d + &*h)?;
            }
            let out = self.frame_proj.forward(&d)?.reshape((b, r, cfg.n_mels))?;
            cum_align = (cum_align + &align)?;
            prev_align = align.clone();
            alignments.push(align);

            let predicted = out.narrow(1, r - 1, 1)?.squeeze(1)?.detach();
            let truth = || -> Result<Tensor> {
                let t = targets.ok_or_else(|| {
                    Error::InvalidInput("teacher forcing needs target frames".into())
                })?;
                Ok(t.narrow(1, (step + 1) * r - 1, 1)?.squeeze(1)?)
            };
            frames.push(out);
            if step + 1 == steps {
                break;
            }
            prev_frame = match feed {
                DecoderFeed::FreeRunning => predicted,
                DecoderFeed::TeacherForcing => truth()?,
                DecoderFeed::Scheduled(rate) if rate >= 1.0 => truth()?,
                DecoderFeed::Scheduled(rate) => {
                    let rng = rng.as_deref_mut().ok_or_else(|| {
                        Error::InvalidInput("scheduled sampling needs a random source".into())
                    })?;
                    let coins: Vec<f32> = (0..b)
                        .map(|_| if rng.gen::<f64>() < rate { 1.0 } else { 0.0 })
                        .collect();
                    let m = Tensor::from_vec(coins, (b, 1), &DEVICE)?;
                    (&predicted + (truth()? - &predicted)?.broadcast_mul(&m)?)?
                }
            };
        }
        let mel = Tensor::cat(&frames, 1)?;
        let out_len = steps * r;
        let post_mask = frame_mask(lens, out_len)?;
        let post = self.postnet.forward(&mel, &post_mask, train)?;
        let linear = self.linear_proj.forward(&post)?;
        Ok(Forward {
            mel,
            linear,
            alignments,
        })
    }

    /// Free-running synthesis: exactly one output frame per PPG frame.
    pub fn synthesize(&self, ppg: &Ppg) -> Result<Synthesis> {
        self.check_ppg(ppg)?;
        let t = ppg.n_frames();
        let (x, lens) = pad_batch(&[(ppg.frames.as_slice(), t)], self.cfg.n_ppg)?;
        let fwd = self.forward(&x, &lens, None, DecoderFeed::FreeRunning, false, None)?;
        let take = |y: &Tensor, bins: usize| -> Result<Frames> {
            let v = y.squeeze(0)?.narrow(0, 0, t)?.clamp(0f32, 1f32)?;
            Frames::new(v.flatten_all()?.to_vec1::<f32>()?, t, bins)
        };
        let mel = take(&fwd.mel, self.cfg.n_mels)?;
        let linear = take(&fwd.linear, self.cfg.n_linear)?;
        let steps = fwd.alignments.len();
        let align = Tensor::cat(&fwd.alignments, 0)?;
        let alignment = Frames::new(align.flatten_all()?.to_vec1::<f32>()?, steps, t)?;
        Ok(Synthesis {
            mel: MelSpectrogram::new(mel, MelRole::SynthYhat),
            linear: LinearSpectrogram { frames: linear },
            alignment,
        })
    }

    pub fn to_checkpoint(
        &self,
        kind: NetworkKind,
        features: &FeatureConfig,
        step: usize,
        parents: Vec<String>,
    ) -> Result<Checkpoint> {
        Checkpoint::from_store(
            CheckpointHeader {
                kind,
                feature_hash: features.hash(),
                features: features.clone(),
                step,
                config: serde_json::to_value(&self.cfg)?,
                parents,
            },
            &self.store,
        )
    }

    /// Loads a synthesizer-shaped checkpoint of the given kind.
    pub fn from_checkpoint(ck: &Checkpoint, kind: NetworkKind) -> Result<Self> {
        ck.expect_kind(kind)?;
        let cfg: SynthConfig = serde_json::from_value(ck.header.config.clone())?;
        let model = Self::new(cfg, 0)?;
        model.store.load(&ck.tensors)?;
        Ok(model)
    }
}

/// Fraction of consecutive decoder steps whose attention peak does not move
/// backwards. Returns 1 for fewer than two steps.
pub fn alignment_monotonicity(alignment: &Frames) -> f64 {
    let peaks: Vec<usize> = alignment
        .rows()
        .map(crate::recognizer::decode::argmax)
        .collect();
    if peaks.len() < 2 {
        return 1.0;
    }
    let ok = peaks.windows(2).filter(|w| w[1] >= w[0]).count();
    ok as f64 / (peaks.len() - 1) as f64
}
