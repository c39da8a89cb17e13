use candle_core::{Tensor, D};
use candle_nn::ops::sigmoid;
use serde::{Deserialize, Serialize};

use super::{Init, Scope, DEVICE};
use crate::error::{Error, Result};

/// `[B, 1, T]` mask with ones on valid frames.
pub fn frame_mask(lens: &[usize], max_t: usize) -> Result<Tensor> {
    let mut data = vec![0.0f32; lens.len() * max_t];
    for (b, &l) in lens.iter().enumerate() {
        for t in 0..l.min(max_t) {
            data[b * max_t + t] = 1.0;
        }
    }
    Ok(Tensor::from_vec(data, (lens.len(), 1, max_t), &DEVICE)?)
}

/// Additive attention mask `[B, T]`: 0 on valid positions, a large negative
/// number on padding.
pub fn attention_mask(lens: &[usize], max_t: usize) -> Result<Tensor> {
    let mut data = vec![-1e9f32; lens.len() * max_t];
    for (b, &l) in lens.iter().enumerate() {
        for t in 0..l.min(max_t) {
            data[b * max_t + t] = 0.0;
        }
    }
    Ok(Tensor::from_vec(data, (lens.len(), max_t), &DEVICE)?)
}

/// Affine layer; the weight is stored `[in, out]`.
#[derive(Debug, Clone)]
pub struct Linear {
    w: Tensor,
    b: Option<Tensor>,
}

impl Linear {
    pub fn new(s: &Scope, d_in: usize, d_out: usize) -> Result<Self> {
        Self::with_bias(s, d_in, d_out, Init::Zeros)
    }

    pub fn with_bias(s: &Scope, d_in: usize, d_out: usize, bias: Init) -> Result<Self> {
        let bound = 1.0 / (d_in as f32).sqrt();
        Ok(Self {
            w: s.param("w", &[d_in, d_out], Init::Uniform(bound))?,
            b: Some(s.param("b", &[d_out], bias)?),
        })
    }

    pub fn no_bias(s: &Scope, d_in: usize, d_out: usize) -> Result<Self> {
        let bound = 1.0 / (d_in as f32).sqrt();
        Ok(Self {
            w: s.param("w", &[d_in, d_out], Init::Uniform(bound))?,
            b: None,
        })
    }

    pub fn weight(&self) -> &Tensor {
        &self.w
    }

    pub fn bias(&self) -> Option<&Tensor> {
        self.b.as_ref()
    }

    /// Applies to the last dimension of a 2-D or 3-D input.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = match x.rank() {
            2 => x.matmul(&self.w)?,
            3 => {
                let (b, t, c) = x.dims3()?;
                x.reshape((b * t, c))?
                    .matmul(&self.w)?
                    .reshape((b, t, self.w.dim(1)?))?
            }
            r => return Err(Error::Shape(format!("Linear expects rank 2 or 3, got {r}"))),
        };
        Ok(match &self.b {
            Some(b) => y.broadcast_add(b)?,
            None => y,
        })
    }
}

/// 1-D convolution over `[B, C, T]` with explicit left/right zero padding.
#[derive(Debug, Clone)]
pub struct Conv1d {
    w: Tensor,
    b: Tensor,
    pad_left: usize,
    pad_right: usize,
    dilation: usize,
}

impl Conv1d {
    /// Output length equals input length; extra padding goes on the right for even kernels.
    pub fn same(s: &Scope, c_in: usize, c_out: usize, kernel: usize) -> Result<Self> {
        let total = kernel - 1;
        Self::build(s, c_in, c_out, kernel, 1, total / 2, total - total / 2)
    }

    /// Left-padded so output `t` sees inputs `<= t` only.
    pub fn causal(s: &Scope, c_in: usize, c_out: usize, kernel: usize, dilation: usize) -> Result<Self> {
        Self::build(s, c_in, c_out, kernel, dilation, (kernel - 1) * dilation, 0)
    }

    fn build(
        s: &Scope,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        dilation: usize,
        pad_left: usize,
        pad_right: usize,
    ) -> Result<Self> {
        let bound = 1.0 / ((c_in * kernel) as f32).sqrt();
        Ok(Self {
            w: s.param("w", &[c_out, c_in, kernel], Init::Uniform(bound))?,
            b: s.param("b", &[c_out], Init::Zeros)?,
            pad_left,
            pad_right,
            dilation,
        })
    }

    pub fn weight(&self) -> &Tensor {
        &self.w
    }

    pub fn bias(&self) -> &Tensor {
        &self.b
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let x = if self.pad_left + self.pad_right > 0 {
            x.pad_with_zeros(D::Minus1, self.pad_left, self.pad_right)?
        } else {
            x.clone()
        };
        let y = x.conv1d(&self.w, 0, 1, self.dilation, 1)?;
        Ok(y.broadcast_add(&self.b.reshape((1, (), 1))?)?)
    }
}

/// Batch normalization over `[B, C, T]` whose statistics ignore padded frames.
#[derive(Debug, Clone)]
pub struct MaskedBatchNorm {
    gamma: Tensor,
    beta: Tensor,
    running_mean: candle_core::Var,
    running_var: candle_core::Var,
    momentum: f64,
    eps: f64,
}

impl MaskedBatchNorm {
    pub fn new(s: &Scope, channels: usize) -> Result<Self> {
        Ok(Self {
            gamma: s.param("gamma", &[channels], Init::Const(1.0))?,
            beta: s.param("beta", &[channels], Init::Zeros)?,
            running_mean: s.buffer("running_mean", &[channels], Init::Zeros)?,
            running_var: s.buffer("running_var", &[channels], Init::Const(1.0))?,
            momentum: 0.1,
            eps: 1e-5,
        })
    }

    /// In training mode normalizes with masked batch statistics and updates the
    /// running averages; otherwise uses the running averages.
    pub fn forward(&self, x: &Tensor, mask: &Tensor, train: bool) -> Result<Tensor> {
        let (mean, var) = if train {
            let count = mask.sum_all()?.to_scalar::<f32>()?.max(1.0) as f64;
            let mean = (x.broadcast_mul(mask)?.sum_keepdim(0)?.sum_keepdim(2)? / count)?;
            let centered = x.broadcast_sub(&mean)?.broadcast_mul(mask)?;
            let var = (centered.sqr()?.sum_keepdim(0)?.sum_keepdim(2)? / count)?;
            let m = self.momentum;
            let rm = ((self.running_mean.as_tensor() * (1.0 - m))?
                + (mean.detach().flatten_all()? * m)?)?;
            let rv = ((self.running_var.as_tensor() * (1.0 - m))?
                + (var.detach().flatten_all()? * m)?)?;
            self.running_mean.set(&rm)?;
            self.running_var.set(&rv)?;
            (mean, var)
        } else {
            (
                self.running_mean.as_tensor().reshape((1, (), 1))?,
                self.running_var.as_tensor().reshape((1, (), 1))?,
            )
        };
        let y = x
            .broadcast_sub(&mean)?
            .broadcast_div(&(var + self.eps)?.sqrt()?)?
            .broadcast_mul(&self.gamma.reshape((1, (), 1))?)?
            .broadcast_add(&self.beta.reshape((1, (), 1))?)?;
        Ok(y.broadcast_mul(mask)?)
    }
}

/// Gated recurrent unit with the input projection hoisted out of the time loop.
#[derive(Debug, Clone)]
pub struct Gru {
    w_ih: Tensor,
    w_hh: Tensor,
    b_ih: Tensor,
    b_hh: Tensor,
    hidden: usize,
}

impl Gru {
    pub fn new(s: &Scope, d_in: usize, hidden: usize) -> Result<Self> {
        let bound = 1.0 / (hidden as f32).sqrt();
        Ok(Self {
            w_ih: s.param("w_ih", &[d_in, 3 * hidden], Init::Uniform(bound))?,
            w_hh: s.param("w_hh", &[hidden, 3 * hidden], Init::Uniform(bound))?,
            b_ih: s.param("b_ih", &[3 * hidden], Init::Zeros)?,
            b_hh: s.param("b_hh", &[3 * hidden], Init::Zeros)?,
            hidden,
        })
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    /// `[.., d_in]` → `[.., 3H]`.
    pub fn project_input(&self, x: &Tensor) -> Result<Tensor> {
        let y = match x.rank() {
            2 => x.matmul(&self.w_ih)?,
            _ => {
                let (b, t, c) = x.dims3()?;
                x.reshape((b * t, c))?
                    .matmul(&self.w_ih)?
                    .reshape((b, t, 3 * self.hidden))?
            }
        };
        Ok(y.broadcast_add(&self.b_ih)?)
    }

    /// One step from an already projected input `[B, 3H]`.
    pub fn step_projected(&self, xp: &Tensor, h: &Tensor) -> Result<Tensor> {
        let hp = h.matmul(&self.w_hh)?.broadcast_add(&self.b_hh)?;
        let hdim = self.hidden;
        let r = sigmoid(&(xp.narrow(1, 0, hdim)? + hp.narrow(1, 0, hdim)?)?)?;
        let z = sigmoid(&(xp.narrow(1, hdim, hdim)? + hp.narrow(1, hdim, hdim)?)?)?;
        let n = (xp.narrow(1, 2 * hdim, hdim)? + (r * hp.narrow(1, 2 * hdim, hdim)?)?)?.tanh()?;
        Ok((&n + z.mul(&(h - &n)?)?)?)
    }

    pub fn step(&self, x: &Tensor, h: &Tensor) -> Result<Tensor> {
        self.step_projected(&self.project_input(x)?, h)
    }
}

/// Bidirectional GRU over `[B, T, C]`; padded steps leave the state untouched,
/// so each direction only ever sees real frames.
#[derive(Debug, Clone)]
pub struct BiGru {
    fwd: Gru,
    bwd: Gru,
}

impl BiGru {
    pub fn new(s: &Scope, d_in: usize, hidden: usize) -> Result<Self> {
        Ok(Self {
            fwd: Gru::new(&s.pp("fwd"), d_in, hidden)?,
            bwd: Gru::new(&s.pp("bwd"), d_in, hidden)?,
        })
    }

    /// `mask` is `[B, 1, T]`. Output `[B, T, 2H]`.
    pub fn forward(&self, x: &Tensor, mask: &Tensor) -> Result<Tensor> {
        let (b, t_len, _) = x.dims3()?;
        let h0 = Tensor::zeros((b, self.fwd.hidden), x.dtype(), x.device())?;
        let fwd_in = self.fwd.project_input(x)?;
        let bwd_in = self.bwd.project_input(x)?;
        let step_mask: Vec<Tensor> = (0..t_len)
            .map(|t| mask.narrow(2, t, 1)?.squeeze(2))
            .collect::<candle_core::Result<_>>()?;
        let all_valid = mask.min_all()?.to_scalar::<f32>()? > 0.5;

        let run = |gru: &Gru, proj: &Tensor, order: &mut dyn Iterator<Item = usize>| -> Result<Vec<(usize, Tensor)>> {
            let mut h = h0.clone();
            let mut outs = Vec::with_capacity(t_len);
            for t in order {
                let cand = gru.step_projected(&proj.narrow(1, t, 1)?.squeeze(1)?, &h)?;
                h = if all_valid {
                    cand
                } else {
                    let m = &step_mask[t];
                    (&h + (cand - &h)?.broadcast_mul(m)?)?
                };
                outs.push((t, h.clone()));
            }
            Ok(outs)
        };
        let f = run(&self.fwd, &fwd_in, &mut (0..t_len))?;
        let mut bw = run(&self.bwd, &bwd_in, &mut (0..t_len).rev())?;
        bw.reverse();
        let fs: Vec<Tensor> = f.into_iter().map(|(_, h)| h).collect();
        let bs: Vec<Tensor> = bw.into_iter().map(|(_, h)| h).collect();
        let fwd = Tensor::stack(&fs, 1)?;
        let bwd = Tensor::stack(&bs, 1)?;
        Ok(Tensor::cat(&[fwd, bwd], 2)?)
    }
}

#[derive(Debug, Clone)]
pub struct Highway {
    h: Linear,
    t: Linear,
}

impl Highway {
    pub fn new(s: &Scope, dim: usize) -> Result<Self> {
        Ok(Self {
            h: Linear::new(&s.pp("h"), dim, dim)?,
            t: Linear::with_bias(&s.pp("t"), dim, dim, Init::Const(-1.0))?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let h = self.h.forward(x)?.relu()?;
        let t = sigmoid(&self.t.forward(x)?)?;
        Ok((x + (h - x)?.mul(&t)?)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CbhgConfig {
    /// Convolution bank holds kernels `1..=bank_size`.
    pub bank_size: usize,
    pub bank_channels: usize,
    pub projection_channels: usize,
    pub highway_layers: usize,
    pub gru_hidden: usize,
}

/// Convolution bank, highway network and bidirectional GRU.
#[derive(Debug, Clone)]
pub struct Cbhg {
    bank: Vec<(Conv1d, MaskedBatchNorm)>,
    proj1: (Conv1d, MaskedBatchNorm),
    proj2: (Conv1d, MaskedBatchNorm),
    pre_highway: Option<Linear>,
    highways: Vec<Highway>,
    gru: BiGru,
}

impl Cbhg {
    pub fn new(s: &Scope, d_in: usize, cfg: &CbhgConfig) -> Result<Self> {
        let bank = (1..=cfg.bank_size)
            .map(|k| {
                let sk = s.pp(format!("bank{k}"));
                Ok((
                    Conv1d::same(&sk.pp("conv"), d_in, cfg.bank_channels, k)?,
                    MaskedBatchNorm::new(&sk.pp("bn"), cfg.bank_channels)?,
                ))
            })
            .collect::<Result<Vec<_>>>()?;
        let bank_out = cfg.bank_size * cfg.bank_channels;
        let proj1 = (
            Conv1d::same(&s.pp("proj1.conv"), bank_out, cfg.projection_channels, 3)?,
            MaskedBatchNorm::new(&s.pp("proj1.bn"), cfg.projection_channels)?,
        );
        let proj2 = (
            Conv1d::same(&s.pp("proj2.conv"), cfg.projection_channels, d_in, 3)?,
            MaskedBatchNorm::new(&s.pp("proj2.bn"), d_in)?,
        );
        let hw_dim = 2 * cfg.gru_hidden;
        let pre_highway = if d_in != hw_dim {
            Some(Linear::new(&s.pp("pre_highway"), d_in, hw_dim)?)
        } else {
            None
        };
        let highways = (0..cfg.highway_layers)
            .map(|i| Highway::new(&s.pp(format!("highway{i}")), hw_dim))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            bank,
            proj1,
            proj2,
            pre_highway,
            highways,
            gru: BiGru::new(&s.pp("gru"), hw_dim, cfg.gru_hidden)?,
        })
    }

    /// `x` is `[B, T, d_in]`, `mask` `[B, 1, T]`; returns `[B, T, 2 * gru_hidden]`.
    pub fn forward(&self, x: &Tensor, mask: &Tensor, train: bool) -> Result<Tensor> {
        let xt = x.transpose(1, 2)?.contiguous()?;
        let bank = self
            .bank
            .iter()
            .map(|(conv, bn)| bn.forward(&conv.forward(&xt)?.relu()?, mask, train))
            .collect::<Result<Vec<_>>>()?;
        let y = Tensor::cat(&bank, 1)?;
        // Max-pool, width 2, stride 1: keeps the time resolution.
        let prev = y.pad_with_same(2, 1, 0)?.narrow(2, 0, y.dim(2)?)?;
        let y = y.maximum(&prev)?.broadcast_mul(mask)?;
        let y = self.proj1.1.forward(&self.proj1.0.forward(&y)?.relu()?, mask, train)?;
        let y = self.proj2.1.forward(&self.proj2.0.forward(&y)?, mask, train)?;
        let y = (y + xt)?.transpose(1, 2)?;
        let mut y = match &self.pre_highway {
            Some(l) => l.forward(&y)?,
            None => y,
        };
        for hw in &self.highways {
            y = hw.forward(&y)?;
        }
        self.gru.forward(&y, mask)
    }
}
