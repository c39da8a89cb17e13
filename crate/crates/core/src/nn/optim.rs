use candle_core::backprop::GradStore;
use candle_core::{Tensor, Var};
use candle_nn::{AdamW, Optimizer, ParamsAdamW};

use crate::error::Result;

/// Learning rate after `step` of `total` steps, decaying linearly from `base`
/// to `base * final_fraction`.
pub fn linear_decay_lr(base: f64, final_fraction: f64, step: usize, total: usize) -> f64 {
    if total == 0 {
        return base;
    }
    let progress = (step as f64 / total as f64).min(1.0);
    base * (1.0 - progress * (1.0 - final_fraction))
}

/// Rescales gradients so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm(grads: &mut GradStore, vars: &[Var], max_norm: f64) -> Result<f64> {
    let mut sq = 0.0f64;
    for v in vars {
        if let Some(g) = grads.get(v.as_tensor()) {
            sq += g.sqr()?.sum_all()?.to_scalar::<f32>()? as f64;
        }
    }
    let norm = sq.sqrt();
    if norm > max_norm && norm.is_finite() {
        let scale = max_norm / norm;
        for v in vars {
            if let Some(g) = grads.get(v.as_tensor()) {
                let scaled = (g * scale)?;
                grads.insert(v.as_tensor(), scaled);
            }
        }
    }
    Ok(norm)
}

/// Adam with a linearly decaying learning rate and global-norm clipping.
pub struct Adam {
    inner: AdamW,
    vars: Vec<Var>,
    base_lr: f64,
    final_fraction: f64,
    total_steps: usize,
    clip: f64,
}

impl Adam {
    pub fn new(vars: Vec<Var>, base_lr: f64, total_steps: usize) -> Result<Self> {
        let params = ParamsAdamW {
            lr: base_lr,
            weight_decay: 0.0,
            ..ParamsAdamW::default()
        };
        Ok(Self {
            inner: AdamW::new(vars.clone(), params)?,
            vars,
            base_lr,
            final_fraction: 0.1,
            total_steps,
            clip: 1.0,
        })
    }

    /// Learning rate reached at the end of the schedule, as a fraction of the base.
    pub fn with_final_fraction(mut self, final_fraction: f64) -> Self {
        self.final_fraction = final_fraction;
        self
    }

    pub fn lr_at(&self, step: usize) -> f64 {
        linear_decay_lr(self.base_lr, self.final_fraction, step, self.total_steps)
    }

    /// Backpropagates `loss` and applies one update at schedule position `step`.
    pub fn backward_step(&mut self, loss: &Tensor, step: usize) -> Result<f64> {
        let mut grads = loss.backward()?;
        let norm = clip_grad_norm(&mut grads, &self.vars, self.clip)?;
        self.inner.set_learning_rate(self.lr_at(step));
        self.inner.step(&grads)?;
        Ok(norm)
    }
}
