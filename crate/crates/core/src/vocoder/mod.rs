//! Autoregressive vocoder: gated dilated causal convolutions over mu-law
//! codes, locally conditioned on mel frames that a learned upsampler stretches
//! to the audio rate, with a 256-way categorical output.

mod generate;
mod train;

use candle_core::{DType, Tensor};
use candle_nn::ops::sigmoid;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{Checkpoint, CheckpointHeader, NetworkKind};
use crate::error::{Error, Result};
use crate::features::{FeatureConfig, MelSpectrogram};
use crate::nn::{Conv1d, Init, Linear, ParamStore, Scope, DEVICE};

pub use generate::{generate, GenerateMode};
pub use train::{
    prepare_pair, teacher_forced_accuracy, train_vocoder, VocoderExample, VocoderTrainConfig,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VocoderConfig {
    pub n_mels: usize,
    /// Per-stage upsampling factors; their product must equal the hop length.
    pub upsample_strides: Vec<usize>,
    pub upsample_channels: usize,
    /// Each stack repeats dilations `1, 2, 4, …, max_dilation`.
    pub stacks: usize,
    pub max_dilation: usize,
    pub kernel: usize,
    pub residual_channels: usize,
    pub skip_channels: usize,
    pub classes: usize,
    #[serde(default = "default_rate")]
    pub sample_rate: u32,
}

fn default_rate() -> u32 {
    22050
}

impl VocoderConfig {
    pub fn desk() -> Self {
        Self {
            n_mels: 80,
            upsample_strides: vec![16, 16],
            upsample_channels: 32,
            stacks: 2,
            max_dilation: 128,
            kernel: 2,
            residual_channels: 32,
            skip_channels: 64,
            classes: 256,
            sample_rate: 22050,
        }
    }

    pub fn paper() -> Self {
        Self {
            upsample_channels: 80,
            max_dilation: 512,
            residual_channels: 64,
            skip_channels: 128,
            ..Self::desk()
        }
    }

    pub fn dilations(&self) -> Vec<usize> {
        let per_stack: Vec<usize> = std::iter::successors(Some(1usize), |d| Some(d * 2))
            .take_while(|&d| d <= self.max_dilation)
            .collect();
        (0..self.stacks).flat_map(|_| per_stack.clone()).collect()
    }

    pub fn hop(&self) -> usize {
        self.upsample_strides.iter().product()
    }

    pub fn validate(&self, hop_length: usize) -> Result<()> {
        if self.upsample_strides.is_empty() || self.upsample_strides.contains(&0) {
            return Err(Error::InvalidConfig("upsampling strides must be positive".into()));
        }
        if self.hop() != hop_length {
            return Err(Error::ConfigMismatch(format!(
                "upsampling strides multiply to {}, hop length is {hop_length}",
                self.hop()
            )));
        }
        if self.kernel == 0 || self.stacks == 0 || self.max_dilation == 0 {
            return Err(Error::InvalidConfig("vocoder needs at least one layer".into()));
        }
        if !(2..=256).contains(&self.classes) {
            return Err(Error::InvalidConfig("output classes must be in 2..=256".into()));
        }
        Ok(())
    }
}

/// Number of past samples one prediction can see.
pub fn receptive_field(cfg: &VocoderConfig) -> usize {
    1 + (cfg.kernel - 1) * cfg.dilations().iter().sum::<usize>()
}

#[derive(Debug, Clone)]
struct ResidualLayer {
    dilated: Conv1d,
    cond: Linear,
    res: Linear,
    skip: Linear,
    dilation: usize,
}

#[derive(Debug, Clone)]
pub struct VocoderModel {
    cfg: VocoderConfig,
    store: ParamStore,
    /// One weight `[c_in, stride * c_out]` and bias per stage.
    upsample: Vec<(Tensor, Tensor, usize)>,
    embed: Tensor,
    layers: Vec<ResidualLayer>,
    post1: Linear,
    post2: Linear,
}

impl VocoderModel {
    pub fn new(cfg: VocoderConfig, seed: u64) -> Result<Self> {
        let store = ParamStore::new(seed);
        let root = store.root();
        let mut upsample = Vec::new();
        let mut c_in = cfg.n_mels;
        for (i, &s) in cfg.upsample_strides.iter().enumerate() {
            let sc: Scope = root.pp(format!("upsample{i}"));
            let bound = 1.0 / (c_in as f32).sqrt();
            upsample.push((
                sc.param("w", &[c_in, s * cfg.upsample_channels], Init::Uniform(bound))?,
                sc.param("b", &[cfg.upsample_channels], Init::Zeros)?,
                s,
            ));
            c_in = cfg.upsample_channels;
        }
        let r = cfg.residual_channels;
        let layers = cfg
            .dilations()
            .into_iter()
            .enumerate()
            .map(|(i, d)| {
                let s = root.pp(format!("layer{i}"));
                Ok(ResidualLayer {
                    dilated: Conv1d::causal(&s.pp("dilated"), r, 2 * r, cfg.kernel, d)?,
                    cond: Linear::no_bias(&s.pp("cond"), cfg.upsample_channels, 2 * r)?,
                    res: Linear::new(&s.pp("res"), r, r)?,
                    skip: Linear::new(&s.pp("skip"), r, cfg.skip_channels)?,
                    dilation: d,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            embed: root.param("embed", &[cfg.classes, r], Init::Uniform(1.0))?,
            post1: Linear::new(&root.pp("post1"), cfg.skip_channels, cfg.skip_channels)?,
            post2: Linear::new(&root.pp("post2"), cfg.skip_channels, cfg.classes)?,
            upsample,
            layers,
            cfg,
            store,
        })
    }

    pub fn config(&self) -> &VocoderConfig {
        &self.cfg
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn checksum(&self) -> Result<String> {
        self.store.checksum()
    }

    fn check_mel(&self, m: &MelSpectrogram) -> Result<()> {
        if m.n_mels() != self.cfg.n_mels || m.n_frames() == 0 {
            return Err(Error::Shape(format!(
                "vocoder expects [frames >= 1, {}] mel, got [{}, {}]",
                self.cfg.n_mels,
                m.n_frames(),
                m.n_mels()
            )));
        }
        Ok(())
    }

    /// `[T, n_mels]` → `[T * hop, upsample_channels]`.
    fn upsample_tensor(&self, mel: &Tensor) -> Result<Tensor> {
        let mut x = mel.clone();
        for (w, b, s) in &self.upsample {
            let (t, _) = x.dims2()?;
            let c = self.cfg.upsample_channels;
            x = x.matmul(w)?.reshape((t * s, c))?.broadcast_add(b)?;
        }
        Ok(x)
    }

    /// Silent samples assumed before every utterance: one receptive field.
    pub(crate) fn lead_in(&self) -> usize {
        receptive_field(&self.cfg) - 1
    }

    /// Mu-law code of a zero sample.
    pub(crate) fn silence_code(&self) -> u8 {
        (self.cfg.classes / 2) as u8
    }

    /// Conditioning series at the audio rate: `n_frames * hop` rows.
    pub fn upsample_conditioning(&self, m: &MelSpectrogram) -> Result<Vec<Vec<f32>>> {
        self.check_mel(m)?;
        let mel = Tensor::from_slice(m.frames.as_slice(), (m.n_frames(), m.n_mels()), &DEVICE)?;
        Ok(self.upsample_tensor(&mel)?.to_vec2::<f32>()?)
    }

    /// Teacher-forced next-code logits, one row per entry of `codes`, with
    /// silence before `codes[0]`. `codes` must cover `m` exactly.
    pub fn predict_logits(&self, codes: &[u8], m: &MelSpectrogram) -> Result<Vec<Vec<f32>>> {
        self.check_mel(m)?;
        if codes.len() != m.n_frames() * self.cfg.hop() {
            return Err(Error::Shape(format!(
                "{} codes for {} frames of hop {}",
                codes.len(),
                m.n_frames(),
                self.cfg.hop()
            )));
        }
        let mel = Tensor::from_slice(m.frames.as_slice(), (m.n_frames(), m.n_mels()), &DEVICE)?;
        let cond = self.upsample_tensor(&mel)?;
        Ok(self.logits(codes, self.silence_code(), &cond)?.to_vec2::<f32>()?)
    }

    /// Logits `[L, classes]` for predicting each of `codes` from the codes
    /// before it. `cond` is `[L, upsample_channels]`; `history` is the code
    /// preceding `codes[0]`.
    pub(crate) fn logits(&self, codes: &[u8], history: u8, cond: &Tensor) -> Result<Tensor> {
        let l = codes.len();
        let mut inputs = Vec::with_capacity(l);
        inputs.push(history as u32);
        inputs.extend(codes[..l - 1].iter().map(|&c| c as u32));
        let ids = Tensor::from_vec(inputs, l, &DEVICE)?;
        // [1, R, L]
        let mut x = self.embed.index_select(&ids, 0)?.t()?.unsqueeze(0)?.contiguous()?;
        let r = self.cfg.residual_channels;
        let mut skip: Option<Tensor> = None;
        for layer in &self.layers {
            let z = layer.dilated.forward(&x)?.squeeze(0)?.t()?; // [L, 2R]
            let z = (z + layer.cond.forward(cond)?)?;
            let gate = (z.narrow(1, 0, r)?.tanh()? * sigmoid(&z.narrow(1, r, r)?)?)?;
            let res = layer.res.forward(&gate)?.t()?.unsqueeze(0)?;
            x = ((x + res)? * std::f64::consts::FRAC_1_SQRT_2)?;
            let s = layer.skip.forward(&gate)?;
            skip = Some(match skip {
                Some(acc) => (acc + s)?,
                None => s,
            });
        }
        let h = self.post1.forward(&skip.expect("at least one layer").relu()?)?.relu()?;
        Ok(self.post2.forward(&h)?)
    }

    pub fn to_checkpoint(&self, features: &FeatureConfig, step: usize) -> Result<Checkpoint> {
        Checkpoint::from_store(
            CheckpointHeader {
                kind: NetworkKind::Vocoder,
                feature_hash: features.hash(),
                features: features.clone(),
                step,
                config: serde_json::to_value(&self.cfg)?,
                parents: vec![],
            },
            &self.store,
        )
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        ck.expect_kind(NetworkKind::Vocoder)?;
        let cfg: VocoderConfig = serde_json::from_value(ck.header.config.clone())?;
        cfg.validate(ck.header.features.hop_length)?;
        let model = Self::new(cfg, 0)?;
        model.store.load(&ck.tensors)?;
        Ok(model)
    }
}

pub(crate) fn cond_tensor(rows: &[Vec<f32>]) -> Result<Tensor> {
    let c = rows.first().map_or(0, Vec::len);
    let flat: Vec<f32> = rows.iter().flatten().copied().collect();
    Ok(Tensor::from_vec(flat, (rows.len(), c), &DEVICE)?.to_dtype(DType::F32)?)
}
