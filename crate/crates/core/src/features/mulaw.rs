use super::Waveform;
use crate::error::{Error, Result};

/// Categorical mu-law codes in `[0, channels)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MuLawWaveform {
    pub codes: Vec<u8>,
    pub sample_rate: u32,
}

fn check_channels(channels: usize) -> Result<()> {
    if !(2..=256).contains(&channels) {
        return Err(Error::InvalidInput(format!(
            "mu-law channels must be in 2..=256, got {channels}"
        )));
    }
    Ok(())
}

/// Encode one sample. Round-half-up on the companded value, so 0.0 maps to
/// `channels / 2`.
pub fn encode_sample(x: f32, channels: usize) -> u8 {
    let mu = (channels - 1) as f64;
    let x = x as f64;
    let y = x.signum() * (1.0 + mu * x.abs()).ln() / (1.0 + mu).ln();
    let code = ((y + 1.0) / 2.0 * mu + 0.5).floor();
    code.clamp(0.0, mu) as u8
}

pub fn decode_sample(code: u8, channels: usize) -> f32 {
    let mu = (channels - 1) as f64;
    let y = 2.0 * code as f64 / mu - 1.0;
    (y.signum() * ((1.0 + mu).powf(y.abs()) - 1.0) / mu) as f32
}

pub fn mu_law_encode(w: &Waveform, channels: usize) -> Result<MuLawWaveform> {
    check_channels(channels)?;
    w.validate()?;
    Ok(MuLawWaveform {
        codes: w.samples.iter().map(|&x| encode_sample(x, channels)).collect(),
        sample_rate: w.sample_rate,
    })
}

pub fn mu_law_decode(m: &MuLawWaveform, channels: usize) -> Result<Waveform> {
    check_channels(channels)?;
    if let Some(c) = m.codes.iter().find(|&&c| c as usize >= channels) {
        return Err(Error::InvalidInput(format!("code {c} out of range")));
    }
    Ok(Waveform {
        samples: m.codes.iter().map(|&c| decode_sample(c, channels)).collect(),
        sample_rate: m.sample_rate,
    })
}
