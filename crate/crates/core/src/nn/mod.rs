//! Small neural-network toolkit over `candle` tensors: a seeded parameter
//! store and the layers shared by the networks in this crate.

pub mod ctc;
mod layers;
mod optim;

use std::collections::BTreeMap;
use std::sync::{Arc, Mutex};

use candle_core::{Device, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::features::tvcf::TensorData;

pub use layers::{
    attention_mask, frame_mask, BiGru, Cbhg, CbhgConfig, Conv1d, Gru, Highway, Linear,
    MaskedBatchNorm,
};
pub use optim::{clip_grad_norm, linear_decay_lr, Adam};

pub(crate) const DEVICE: Device = Device::Cpu;

/// How a parameter is initialized.
#[derive(Debug, Clone, Copy)]
pub enum Init {
    Zeros,
    Const(f32),
    /// Uniform in `[-bound, bound]`.
    Uniform(f32),
}

#[derive(Clone)]
struct Param {
    var: Var,
    trainable: bool,
}

/// Named parameters of one network.
///
/// Initial values depend only on the store seed and the parameter name, so the
/// same config and seed always produce the same weights regardless of
/// construction order.
#[derive(Clone)]
pub struct ParamStore {
    params: Arc<Mutex<BTreeMap<String, Param>>>,
    seed: u64,
}

impl std::fmt::Debug for ParamStore {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let n = self.params.lock().unwrap().len();
        f.debug_struct("ParamStore")
            .field("seed", &self.seed)
            .field("params", &n)
            .finish()
    }
}

impl ParamStore {
    pub fn new(seed: u64) -> Self {
        Self {
            params: Arc::new(Mutex::new(BTreeMap::new())),
            seed,
        }
    }

    pub fn root(&self) -> Scope {
        Scope {
            store: self.clone(),
            prefix: String::new(),
        }
    }

    fn create(&self, name: String, dims: &[usize], init: Init, trainable: bool) -> Result<Var> {
        let mut params = self.params.lock().unwrap();
        if let Some(p) = params.get(&name) {
            if p.var.dims() != dims {
                return Err(Error::Shape(format!(
                    "parameter {name} requested as {dims:?}, exists as {:?}",
                    p.var.dims()
                )));
            }
            return Ok(p.var.clone());
        }
        let n: usize = dims.iter().product();
        let values: Vec<f32> = match init {
            Init::Zeros => vec![0.0; n],
            Init::Const(c) => vec![c; n],
            Init::Uniform(bound) => {
                let digest = Sha256::digest(name.as_bytes());
                let mut word = [0u8; 8];
                word.copy_from_slice(&digest[..8]);
                let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ u64::from_le_bytes(word));
                (0..n).map(|_| rng.gen_range(-bound..=bound)).collect()
            }
        };
        let var = Var::from_tensor(&Tensor::from_vec(values, dims, &DEVICE)?)?;
        params.insert(
            name,
            Param {
                var: var.clone(),
                trainable,
            },
        );
        Ok(var)
    }

    /// Parameters the optimizer may update.
    pub fn trainable_vars(&self) -> Vec<Var> {
        self.params
            .lock()
            .unwrap()
            .values()
            .filter(|p| p.trainable)
            .map(|p| p.var.clone())
            .collect()
    }

    pub fn len(&self) -> usize {
        self.params.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// All values, sorted by name.
    pub fn snapshot(&self) -> Result<Vec<(String, TensorData)>> {
        let params = self.params.lock().unwrap();
        params
            .iter()
            .map(|(name, p)| {
                let t = p.var.as_tensor();
                let values = t.flatten_all()?.to_vec1::<f32>()?;
                Ok((name.clone(), TensorData::new(t.dims().to_vec(), values)?))
            })
            .collect()
    }

    /// Overwrites every parameter from `tensors`; names and shapes must match exactly.
    pub fn load(&self, tensors: &[(String, TensorData)]) -> Result<()> {
        let params = self.params.lock().unwrap();
        if tensors.len() != params.len() {
            return Err(Error::ConfigMismatch(format!(
                "checkpoint has {} tensors, model has {}",
                tensors.len(),
                params.len()
            )));
        }
        for (name, data) in tensors {
            let p = params.get(name).ok_or_else(|| {
                Error::ConfigMismatch(format!("checkpoint tensor {name} not in model"))
            })?;
            if p.var.dims() != data.dims.as_slice() {
                return Err(Error::ConfigMismatch(format!(
                    "tensor {name}: checkpoint {:?}, model {:?}",
                    data.dims,
                    p.var.dims()
                )));
            }
            p.var
                .set(&Tensor::from_slice(&data.values, data.dims.as_slice(), &DEVICE)?)?;
        }
        Ok(())
    }

    /// SHA-256 over names, shapes and values.
    pub fn checksum(&self) -> Result<String> {
        let mut h = Sha256::new();
        for (name, data) in self.snapshot()? {
            h.update(name.as_bytes());
            h.update(data.to_bytes());
        }
        Ok(hex::encode(h.finalize()))
    }
}

/// A name prefix inside a [`ParamStore`].
#[derive(Clone)]
pub struct Scope {
    store: ParamStore,
    prefix: String,
}

impl Scope {
    pub fn pp(&self, name: impl AsRef<str>) -> Scope {
        let prefix = if self.prefix.is_empty() {
            name.as_ref().to_string()
        } else {
            format!("{}.{}", self.prefix, name.as_ref())
        };
        Scope {
            store: self.store.clone(),
            prefix,
        }
    }

    fn full(&self, name: &str) -> String {
        if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{}", self.prefix, name)
        }
    }

    pub fn param(&self, name: &str, dims: &[usize], init: Init) -> Result<Tensor> {
        Ok(self
            .store
            .create(self.full(name), dims, init, true)?
            .as_tensor()
            .clone())
    }

    /// Non-trainable state such as running statistics.
    pub fn buffer(&self, name: &str, dims: &[usize], init: Init) -> Result<Var> {
        self.store.create(self.full(name), dims, init, false)
    }
}

/// `[B, T, C]` tensor from per-item `[T_i × C]` row-major matrices, zero padded
/// to the longest item.
pub fn pad_batch(items: &[(&[f32], usize)], n_cols: usize) -> Result<(Tensor, Vec<usize>)> {
    let lens: Vec<usize> = items.iter().map(|(_, t)| *t).collect();
    let max_t = lens.iter().copied().max().unwrap_or(0);
    let mut data = vec![0.0f32; items.len() * max_t * n_cols];
    for (b, (values, t)) in items.iter().enumerate() {
        let off = b * max_t * n_cols;
        data[off..off + t * n_cols].copy_from_slice(&values[..t * n_cols]);
    }
    Ok((
        Tensor::from_vec(data, (items.len(), max_t, n_cols), &DEVICE)?,
        lens,
    ))
}
