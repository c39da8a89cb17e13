use std::f64::consts::PI;

use super::Waveform;
use crate::error::{Error, Result};

/// Zero crossings of the sinc kernel on each side.
const HALF_TAPS: f64 = 32.0;

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        (PI * x).sin() / (PI * x)
    }
}

/// Band-limited resampling with a Hann-windowed sinc kernel.
///
/// Output length is `round(len * target / source)`. The kernel weights are
/// renormalized per output sample so constant signals stay constant.
pub fn resample(w: &Waveform, target_rate: u32) -> Result<Waveform> {
    if target_rate == 0 || w.sample_rate == 0 {
        return Err(Error::InvalidInput("sample rates must be positive".into()));
    }
    if target_rate == w.sample_rate {
        return Ok(w.clone());
    }
    let ratio = target_rate as f64 / w.sample_rate as f64;
    let out_len = (w.len() as f64 * ratio).round() as usize;
    // Cutoff relative to the input Nyquist; below 1 when downsampling.
    let cutoff = ratio.min(1.0);
    let half_width = HALF_TAPS / cutoff;
    let x = &w.samples;

    let samples = (0..out_len)
        .map(|j| {
            let t = j as f64 / ratio;
            let lo = (t - half_width).ceil().max(0.0) as usize;
            let hi = ((t + half_width).floor() as usize).min(x.len().saturating_sub(1));
            let mut acc = 0.0;
            let mut wsum = 0.0;
            for (k, &xk) in x.iter().enumerate().take(hi + 1).skip(lo) {
                let d = t - k as f64;
                let win = 0.5 + 0.5 * (PI * d / half_width).cos();
                let weight = cutoff * sinc(cutoff * d) * win;
                acc += weight * xk as f64;
                wsum += weight;
            }
            if wsum.abs() > 1e-9 {
                (acc / wsum).clamp(-1.0, 1.0) as f32
            } else {
                0.0
            }
        })
        .collect();
    Ok(Waveform {
        samples,
        sample_rate: target_rate,
    })
}
