//! Convolutional CTC phoneme recognizer and PPG extraction.
//!
//! Every layer keeps the frame rate (no striding or pooling), so the posterior
//! matrix has exactly one row per input mel frame. Each convolution is followed
//! by Leaky-ReLU and then batch normalization; a per-frame affine head maps to
//! the phone classes plus the CTC blank.

pub(crate) mod decode;
mod phones;

use candle_core::Tensor;
use log::warn;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{Checkpoint, CheckpointHeader, NetworkKind};
use crate::error::{Error, Result};
use crate::features::{FeatureConfig, Frames, MelSpectrogram};
use crate::training::{BatchSampler, TrainReport};
use crate::nn::{ctc, frame_mask, pad_batch, Adam, Conv1d, Linear, MaskedBatchNorm, ParamStore};

pub use decode::{corpus_per, edit_distance, greedy_decode, per, per_counts};
pub use phones::PhoneInventory;

/// Phone ids, never containing the blank.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhonemeSequence {
    pub labels: Vec<usize>,
}

impl PhonemeSequence {
    pub fn new(labels: Vec<usize>, inv: &PhoneInventory) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::InvalidInput("phoneme sequence is empty".into()));
        }
        if let Some(&l) = labels.iter().find(|&&l| l >= inv.len()) {
            return Err(Error::InvalidInput(format!("phone id {l} is not a phone")));
        }
        Ok(Self { labels })
    }

    pub fn parse(transcript: &str, inv: &PhoneInventory) -> Result<Self> {
        Self::new(inv.parse(transcript)?, inv)
    }
}

/// Phonetic posteriorgram: one probability row per mel frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Ppg {
    pub frames: Frames,
}

impl Ppg {
    pub fn n_frames(&self) -> usize {
        self.frames.n_frames()
    }

    pub fn n_classes(&self) -> usize {
        self.frames.n_bins()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrLayer {
    pub channels: usize,
    pub kernel: usize,
    #[serde(default = "one")]
    pub stride: usize,
    #[serde(default = "one")]
    pub pool: usize,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrConfig {
    pub n_mels: usize,
    /// Phones plus blank.
    pub n_classes: usize,
    pub layers: Vec<PrLayer>,
    pub leaky_slope: f32,
}

impl PrConfig {
    /// Four 128-channel, width-3 layers: small enough to overfit a toy corpus quickly.
    pub fn desk() -> Self {
        Self {
            n_mels: 80,
            n_classes: PhoneInventory::timit().n_classes(),
            layers: vec![
                PrLayer {
                    channels: 128,
                    kernel: 3,
                    stride: 1,
                    pool: 1,
                };
                4
            ],
            leaky_slope: 0.1,
        }
    }

    /// Ten 256-channel, width-5 layers.
    pub fn paper() -> Self {
        Self {
            layers: vec![
                PrLayer {
                    channels: 256,
                    kernel: 5,
                    stride: 1,
                    pool: 1,
                };
                10
            ],
            ..Self::desk()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() || self.n_classes < 2 || self.n_mels == 0 {
            return Err(Error::InvalidConfig("recognizer needs layers, classes and bands".into()));
        }
        for (i, l) in self.layers.iter().enumerate() {
            if l.stride != 1 || l.pool != 1 {
                return Err(Error::InvalidConfig(format!(
                    "layer {i} has stride {} / pool {}: the recognizer must keep one output per frame",
                    l.stride, l.pool
                )));
            }
            if l.channels == 0 || l.kernel == 0 {
                return Err(Error::InvalidConfig(format!("layer {i} has zero size")));
            }
        }
        Ok(())
    }
}

/// The recognizer network `P(·)`.
#[derive(Debug, Clone)]
pub struct PrModel {
    cfg: PrConfig,
    store: ParamStore,
    layers: Vec<(Conv1d, MaskedBatchNorm)>,
    head: Linear,
}

impl PrModel {
    pub fn new(cfg: PrConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let store = ParamStore::new(seed);
        let root = store.root();
        let mut c_in = cfg.n_mels;
        let mut layers = Vec::new();
        for (i, l) in cfg.layers.iter().enumerate() {
            let s = root.pp(format!("conv{i}"));
            layers.push((
                Conv1d::same(&s.pp("conv"), c_in, l.channels, l.kernel)?,
                MaskedBatchNorm::new(&s.pp("bn"), l.channels)?,
            ));
            c_in = l.channels;
        }
        let head = Linear::new(&root.pp("head"), c_in, cfg.n_classes)?;
        Ok(Self {
            cfg,
            store,
            layers,
            head,
        })
    }

    pub fn config(&self) -> &PrConfig {
        &self.cfg
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn checksum(&self) -> Result<String> {
        self.store.checksum()
    }

    /// Pre-softmax scores `[B, T, C]` for mels `[B, T, n_mels]`.
    fn logits(&self, mel: &Tensor, lens: &[usize], train: bool) -> Result<Tensor> {
        let (_, t_len, _) = mel.dims3()?;
        let mask = frame_mask(lens, t_len)?;
        let mut x = mel.transpose(1, 2)?.contiguous()?;
        let slope = self.cfg.leaky_slope as f64;
        for (conv, bn) in &self.layers {
            let y = conv.forward(&x)?;
            let y = y.maximum(&(&y * slope)?)?;
            x = bn.forward(&y, &mask, train)?;
        }
        self.head.forward(&x.transpose(1, 2)?)
    }

    fn check_bands(&self, m: &MelSpectrogram) -> Result<()> {
        if m.n_mels() != self.cfg.n_mels {
            return Err(Error::Shape(format!(
                "recognizer expects {} mel bands, got {}",
                self.cfg.n_mels,
                m.n_mels()
            )));
        }
        if m.n_frames() == 0 {
            return Err(Error::Shape("empty mel spectrogram".into()));
        }
        Ok(())
    }

    /// Softmax posteriors, one row per mel frame.
    pub fn extract_ppg(&self, m: &MelSpectrogram) -> Result<Ppg> {
        self.check_bands(m)?;
        let (x, lens) = pad_batch(&[(m.frames.as_slice(), m.n_frames())], self.cfg.n_mels)?;
        let logits = self.logits(&x, &lens, false)?.squeeze(0)?;
        let rows = logits.to_vec2::<f32>()?;
        let mut data = Vec::with_capacity(rows.len() * self.cfg.n_classes);
        for row in rows {
            let max = row.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
            let exps: Vec<f64> = row.iter().map(|&v| ((v - max) as f64).exp()).collect();
            let z: f64 = exps.iter().sum();
            data.extend(exps.iter().map(|e| (e / z) as f32));
        }
        Ok(Ppg {
            frames: Frames::new(data, m.n_frames(), self.cfg.n_classes)?,
        })
    }

    pub fn to_checkpoint(&self, features: &FeatureConfig, step: usize) -> Result<Checkpoint> {
        Checkpoint::from_store(
            CheckpointHeader {
                kind: NetworkKind::Recognizer,
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
        ck.expect_kind(NetworkKind::Recognizer)?;
        let cfg: PrConfig = serde_json::from_value(ck.header.config.clone())?;
        let model = Self::new(cfg, 0)?;
        model.store.load(&ck.tensors)?;
        Ok(model)
    }
}

/// One utterance for recognizer training.
#[derive(Debug, Clone)]
pub struct PrExample {
    pub id: String,
    pub mel: MelSpectrogram,
    pub labels: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrTrainConfig {
    pub steps: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
    /// Final learning rate as a fraction of `learning_rate`.
    #[serde(default = "default_final_fraction")]
    pub lr_final_fraction: f64,
}

fn default_final_fraction() -> f64 {
    0.01
}

impl Default for PrTrainConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            learning_rate: 0.01,
            batch_size: 10,
            seed: 0,
            lr_final_fraction: 0.01,
        }
    }
}

/// CTC training. Returns the per-frame loss after each step.
///
/// Utterances whose transcript cannot fit their frame count are skipped with a
/// warning; an error is returned only if none remain.
pub fn train_pr(model: &PrModel, data: &[PrExample], cfg: &PrTrainConfig) -> Result<TrainReport> {
    let blank = model.cfg.n_classes - 1;
    let mut report = TrainReport::default();
    let mut usable = Vec::new();
    for ex in data {
        model.check_bands(&ex.mel)?;
        let required = ctc::min_frames(&ex.labels);
        if ex.labels.is_empty() || ex.labels.iter().any(|&l| l >= blank) {
            warn!("skipping {}: transcript is empty or has invalid ids", ex.id);
            report.skipped.push((ex.id.clone(), "invalid transcript".into()));
        } else if required > ex.mel.n_frames() {
            let e = Error::CtcInfeasible {
                labels: ex.labels.len(),
                required,
                frames: ex.mel.n_frames(),
            };
            warn!("skipping {}: {e}", ex.id);
            report.skipped.push((ex.id.clone(), e.to_string()));
        } else {
            usable.push(ex);
        }
    }
    if usable.is_empty() {
        return Err(Error::InvalidInput("no trainable utterances".into()));
    }

    let mut opt = Adam::new(model.store.trainable_vars(), cfg.learning_rate, cfg.steps)?
        .with_final_fraction(cfg.lr_final_fraction);
    let mut sampler = BatchSampler::new(usable.len(), cfg.seed);
    for step in 0..cfg.steps {
        let batch: Vec<&PrExample> = sampler
            .next_batch(cfg.batch_size)
            .into_iter()
            .map(|i| usable[i])
            .collect();
        let items: Vec<(&[f32], usize)> = batch
            .iter()
            .map(|e| (e.mel.frames.as_slice(), e.mel.n_frames()))
            .collect();
        let (x, lens) = pad_batch(&items, model.cfg.n_mels)?;
        let logits = model.logits(&x, &lens, true)?;
        let log_probs = candle_nn::ops::log_softmax(&logits, 2)?;
        let host = log_probs.to_vec3::<f32>()?;

        let total_frames: usize = lens.iter().sum();
        let (b, t_max, c) = log_probs.dims3()?;
        let mut grad = vec![0.0f32; b * t_max * c];
        let mut nll = 0.0f64;
        for (i, ex) in batch.iter().enumerate() {
            let (loss, g) = ctc::ctc_loss_and_grad(&host[i][..lens[i]], &ex.labels, blank)?;
            nll += loss;
            for (t, row) in g.iter().enumerate() {
                let off = (i * t_max + t) * c;
                grad[off..off + c].copy_from_slice(row);
            }
        }
        let scale = 1.0 / total_frames as f64;
        let g = (Tensor::from_vec(grad, (b, t_max, c), log_probs.device())? * scale)?;
        // d/d(log_probs) of this surrogate is exactly the CTC gradient.
        let surrogate = (log_probs * g)?.sum_all()?;
        opt.backward_step(&surrogate, step)?;
        report.losses.push((nll * scale) as f32);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::MelRole;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn mel(t: usize, seed: u64) -> MelSpectrogram {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..t * 80).map(|_| rng.gen_range(0.0..1.0)).collect();
        MelSpectrogram::new(Frames::new(data, t, 80).unwrap(), MelRole::TrueY)
    }

    #[test]
    fn desk_model_has_62_classes_and_keeps_time() {
        let model = PrModel::new(PrConfig::desk(), 0).unwrap();
        assert_eq!(model.config().n_classes, 62);
        let ppg = model.extract_ppg(&mel(87, 1)).unwrap();
        assert_eq!((ppg.n_frames(), ppg.n_classes()), (87, 62));
        for row in ppg.frames.rows() {
            let s: f32 = row.iter().sum();
            assert!((s - 1.0).abs() < 1e-5);
            assert!(row.iter().all(|&p| p >= 0.0));
        }
    }

    #[test]
    fn striding_config_is_rejected() {
        let mut cfg = PrConfig::desk();
        cfg.layers[1].stride = 2;
        assert!(matches!(PrModel::new(cfg, 0), Err(Error::InvalidConfig(_))));
        let mut cfg = PrConfig::desk();
        cfg.layers[0].pool = 2;
        assert!(matches!(PrModel::new(cfg, 0), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn band_mismatch_is_shape_error() {
        let model = PrModel::new(PrConfig::desk(), 0).unwrap();
        let m = MelSpectrogram::new(Frames::zeros(5, 64), MelRole::TrueY);
        assert!(matches!(model.extract_ppg(&m), Err(Error::Shape(_))));
    }

    #[test]
    fn single_symbol_loss_goes_to_zero() {
        let model = PrModel::new(PrConfig::desk(), 1).unwrap();
        let data = vec![PrExample {
            id: "u".into(),
            mel: mel(12, 2),
            labels: vec![5],
        }];
        let cfg = PrTrainConfig {
            steps: 150,
            learning_rate: 0.005,
            batch_size: 1,
            seed: 0,
            lr_final_fraction: 1.0,
        };
        let report = train_pr(&model, &data, &cfg).unwrap();
        assert!(report.losses.iter().all(|l| l.is_finite()));
        assert!(report.final_loss().unwrap() < 0.05, "{:?}", report.final_loss());
        assert!(report.final_loss().unwrap() < report.losses[0] / 10.0);
    }

    #[test]
    fn infeasible_utterances_are_skipped() {
        let model = PrModel::new(PrConfig::desk(), 1).unwrap();
        let data = vec![
            PrExample {
                id: "ok".into(),
                mel: mel(8, 2),
                labels: vec![1, 2],
            },
            PrExample {
                id: "too-long".into(),
                mel: mel(3, 3),
                labels: vec![1, 2, 3, 4],
            },
        ];
        let cfg = PrTrainConfig {
            steps: 2,
            ..Default::default()
        };
        let report = train_pr(&model, &data, &cfg).unwrap();
        assert_eq!(report.skipped.len(), 1);
        assert_eq!(report.skipped[0].0, "too-long");
    }

    #[test]
    fn training_is_deterministic() {
        let data: Vec<PrExample> = (0..3)
            .map(|i| PrExample {
                id: format!("u{i}"),
                mel: mel(10 + i, i as u64),
                labels: vec![1 + i, 4],
            })
            .collect();
        let cfg = PrTrainConfig {
            steps: 5,
            batch_size: 2,
            ..Default::default()
        };
        let a = PrModel::new(PrConfig::desk(), 3).unwrap();
        let b = PrModel::new(PrConfig::desk(), 3).unwrap();
        let ra = train_pr(&a, &data, &cfg).unwrap();
        let rb = train_pr(&b, &data, &cfg).unwrap();
        let bits = |r: &TrainReport| r.losses.iter().map(|l| l.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&ra), bits(&rb));
        assert_eq!(a.checksum().unwrap(), b.checksum().unwrap());
    }

    #[test]
    fn checkpoint_round_trip() {
        let model = PrModel::new(PrConfig::desk(), 7).unwrap();
        let ck = model.to_checkpoint(&FeatureConfig::default(), 0).unwrap();
        let back = PrModel::from_checkpoint(&ck).unwrap();
        assert_eq!(back.checksum().unwrap(), model.checksum().unwrap());
        let m = mel(9, 4);
        assert_eq!(model.extract_ppg(&m).unwrap(), back.extract_ppg(&m).unwrap());
    }
}
