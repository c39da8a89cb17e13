//! Sample-by-sample generation on host vectors; each layer keeps a ring
//! buffer of its past inputs, so one step costs one pass through the stack.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::VocoderModel;
use crate::error::Result;
use crate::features::{mu_law_decode, MelSpectrogram, MuLawWaveform, Waveform};
use crate::recognizer::decode::argmax;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum GenerateMode {
    Argmax,
    Sample,
}

/// Affine map with weight stored `[in, out]`.
struct Dense {
    w: Vec<f32>,
    b: Vec<f32>,
    d_in: usize,
    d_out: usize,
}

impl Dense {
    fn from(w: &candle_core::Tensor, b: Option<&candle_core::Tensor>) -> Result<Self> {
        let (d_in, d_out) = w.dims2()?;
        Ok(Self {
            w: w.flatten_all()?.to_vec1()?,
            b: match b {
                Some(b) => b.to_vec1()?,
                None => vec![0.0; d_out],
            },
            d_in,
            d_out,
        })
    }

    /// `out += x · W` (bias not included).
    fn accumulate(&self, x: &[f32], out: &mut [f32]) {
        for (i, &xi) in x.iter().enumerate().take(self.d_in) {
            if xi == 0.0 {
                continue;
            }
            let row = &self.w[i * self.d_out..(i + 1) * self.d_out];
            for (o, w) in out.iter_mut().zip(row) {
                *o += xi * w;
            }
        }
    }

    fn apply(&self, x: &[f32]) -> Vec<f32> {
        let mut out = self.b.clone();
        self.accumulate(x, &mut out);
        out
    }
}

struct HostLayer {
    /// One `[R, 2R]` map per kernel tap, oldest tap first.
    taps: Vec<Dense>,
    bias: Vec<f32>,
    cond: Dense,
    res: Dense,
    skip: Dense,
    dilation: usize,
    history: Vec<Vec<f32>>,
}

pub(crate) struct Stepper {
    embed: Vec<f32>,
    r: usize,
    layers: Vec<HostLayer>,
    post1: Dense,
    post2: Dense,
    skip_channels: usize,
    t: usize,
}

impl Stepper {
    pub fn new(model: &VocoderModel) -> Result<Self> {
        let cfg = &model.cfg;
        let r = cfg.residual_channels;
        let k = cfg.kernel;
        let layers = model
            .layers
            .iter()
            .map(|l| {
                // [2R, R, k] → per tap [R, 2R]
                let w = l.dilated.weight();
                let taps = (0..k)
                    .map(|j| Dense::from(&w.narrow(2, j, 1)?.squeeze(2)?.t()?.contiguous()?, None))
                    .collect::<Result<Vec<_>>>()?;
                let span = (k - 1) * l.dilation + 1;
                Ok(HostLayer {
                    taps,
                    bias: l.dilated.bias().to_vec1()?,
                    cond: Dense::from(l.cond.weight(), None)?,
                    res: Dense::from(l.res.weight(), l.res.bias())?,
                    skip: Dense::from(l.skip.weight(), l.skip.bias())?,
                    dilation: l.dilation,
                    history: vec![vec![0.0; r]; span],
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            embed: model.embed.flatten_all()?.to_vec1()?,
            r,
            layers,
            post1: Dense::from(model.post1.weight(), model.post1.bias())?,
            post2: Dense::from(model.post2.weight(), model.post2.bias())?,
            skip_channels: cfg.skip_channels,
            t: 0,
        })
    }

    /// Logits for the next sample given the previous code and this step's conditioning.
    pub fn step(&mut self, prev_code: u8, cond: &[f32]) -> Vec<f32> {
        let r = self.r;
        let mut x = self.embed[prev_code as usize * r..(prev_code as usize + 1) * r].to_vec();
        let mut skip = vec![0.0f32; self.skip_channels];
        let t = self.t;
        for layer in &mut self.layers {
            let span = layer.history.len();
            layer.history[t % span].copy_from_slice(&x);
            let mut z = layer.bias.clone();
            let k = layer.taps.len();
            for (j, tap) in layer.taps.iter().enumerate() {
                let back = (k - 1 - j) * layer.dilation;
                if back <= t {
                    tap.accumulate(&layer.history[(t - back) % span], &mut z);
                }
            }
            layer.cond.accumulate(cond, &mut z);
            let gate: Vec<f32> = (0..r)
                .map(|i| z[i].tanh() * (1.0 / (1.0 + (-z[r + i]).exp())))
                .collect();
            let res = layer.res.apply(&gate);
            for (xi, ri) in x.iter_mut().zip(&res) {
                *xi = (*xi + ri) * std::f32::consts::FRAC_1_SQRT_2;
            }
            layer.skip.accumulate(&gate, &mut skip);
            for (s, b) in skip.iter_mut().zip(&layer.skip.b) {
                *s += b;
            }
        }
        self.t += 1;
        let h: Vec<f32> = skip.iter().map(|v| v.max(0.0)).collect();
        let h: Vec<f32> = self.post1.apply(&h).iter().map(|v| v.max(0.0)).collect();
        self.post2.apply(&h)
    }
}

fn sample_from(logits: &[f32], rng: &mut ChaCha8Rng) -> usize {
    let max = logits.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
    let p: Vec<f64> = logits.iter().map(|&l| ((l - max) as f64).exp()).collect();
    let z: f64 = p.iter().sum();
    let mut u = rng.gen::<f64>() * z;
    for (i, pi) in p.iter().enumerate() {
        u -= pi;
        if u <= 0.0 {
            return i;
        }
    }
    p.len() - 1
}

/// Autoregressive synthesis of exactly `n_frames * hop` samples.
pub fn generate(model: &VocoderModel, m: &MelSpectrogram, mode: GenerateMode, seed: u64) -> Result<Waveform> {
    let cond = model.upsample_conditioning(m)?;
    let classes = model.cfg.classes;
    let mut stepper = Stepper::new(model)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut prev = model.silence_code();
    let zero_cond = vec![0.0; model.cfg.upsample_channels];
    for _ in 0..model.lead_in() {
        stepper.step(prev, &zero_cond);
    }
    let mut codes = Vec::with_capacity(cond.len());
    for row in &cond {
        let logits = stepper.step(prev, row);
        let c = match mode {
            GenerateMode::Argmax => argmax(&logits),
            GenerateMode::Sample => sample_from(&logits, &mut rng),
        } as u8;
        codes.push(c);
        prev = c;
    }
    mu_law_decode(
        &MuLawWaveform {
            codes,
            sample_rate: model.cfg.sample_rate,
        },
        classes,
    )
}
