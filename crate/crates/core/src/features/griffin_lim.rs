use std::f32::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::stft::{istft, stft, Complex32};
use super::{FeatureConfig, LinearSpectrogram, Waveform};
use crate::error::{Error, Result};

/// Phase reconstruction from a normalized linear spectrogram.
///
/// Debug inverter only: it makes synthesizer output audible without a trained
/// vocoder. The initial phase is drawn from `seed`, so output is deterministic.
pub fn griffin_lim(
    spec: &LinearSpectrogram,
    cfg: &FeatureConfig,
    iters: usize,
    seed: u64,
) -> Result<Waveform> {
    if iters == 0 {
        return Err(Error::InvalidInput("griffin_lim needs at least one iteration".into()));
    }
    let bins = cfg.n_linear_bins();
    if spec.frames.n_bins() != bins {
        return Err(Error::Shape(format!(
            "expected {bins} linear bins, got {}",
            spec.frames.n_bins()
        )));
    }
    let (n_fft, hop) = (cfg.n_fft, cfg.hop_length);
    let length = (spec.n_frames().max(1) - 1) * hop;
    let target: Vec<Vec<f32>> = spec
        .frames
        .rows()
        .map(|r| r.iter().map(|&v| cfg.denormalize(v)).collect())
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut phase: Vec<Vec<Complex32>> = target
        .iter()
        .map(|row| {
            row.iter()
                .map(|_| Complex32::from_polar(1.0, rng.gen_range(0.0..2.0 * PI)))
                .collect()
        })
        .collect();

    let mut signal = vec![0.0; length];
    for _ in 0..iters {
        let full: Vec<Vec<Complex32>> = target
            .iter()
            .zip(&phase)
            .map(|(m, p)| m.iter().zip(p).map(|(&a, &ph)| ph * a).collect())
            .collect();
        signal = istft(&full, n_fft, hop, length);
        if length == 0 {
            break;
        }
        let rebuilt = stft(&signal, n_fft, hop);
        for (p_row, s_row) in phase.iter_mut().zip(&rebuilt) {
            for (p, s) in p_row.iter_mut().zip(s_row) {
                let n = s.norm();
                *p = if n > 1e-12 { s / n } else { Complex32::new(1.0, 0.0) };
            }
        }
    }
    for s in &mut signal {
        *s = s.clamp(-1.0, 1.0);
    }
    Ok(Waveform {
        samples: signal,
        sample_rate: cfg.sample_rate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{FeatureExtractor, Frames};

    fn cfg() -> FeatureConfig {
        FeatureConfig::default()
    }

    /// Relative distance between target magnitudes and the magnitudes of `w`.
    fn spectral_error(target: &LinearSpectrogram, w: &Waveform) -> f64 {
        let c = cfg();
        let got = stft(&w.samples, c.n_fft, c.hop_length);
        let mut num = 0.0f64;
        let mut den = 0.0f64;
        for (row, g) in target.frames.rows().zip(&got) {
            for (v, z) in row.iter().zip(g) {
                let m = c.denormalize(*v) as f64;
                num += (m - z.norm() as f64).powi(2);
                den += m * m;
            }
        }
        (num / den.max(1e-12)).sqrt()
    }

    fn envelope(w: &Waveform) -> Vec<f32> {
        w.samples
            .chunks(256)
            .map(|c| c.iter().map(|x| x * x).sum::<f32>().sqrt())
            .collect()
    }

    fn ncc(a: &[f32], b: &[f32]) -> f32 {
        let n = a.len().min(b.len());
        let dot: f32 = a[..n].iter().zip(&b[..n]).map(|(x, y)| x * y).sum();
        let na: f32 = a[..n].iter().map(|x| x * x).sum::<f32>().sqrt();
        let nb: f32 = b[..n].iter().map(|x| x * x).sum::<f32>().sqrt();
        dot / (na * nb).max(1e-12)
    }

    fn speechlike() -> Waveform {
        let sr = 22050.0;
        let samples = (0..11025)
            .map(|i| {
                let t = i as f32 / sr;
                let f0 = 120.0 + 30.0 * (2.0 * PI * 3.0 * t).sin();
                let env = 0.5 + 0.5 * (2.0 * PI * 4.0 * t).sin().abs();
                let mut s = 0.0;
                for h in 1..8 {
                    s += (2.0 * PI * f0 * h as f32 * t).sin() / h as f32;
                }
                0.2 * env * s
            })
            .collect();
        Waveform::new(samples, 22050).unwrap()
    }

    #[test]
    fn tone_envelope_is_recovered() {
        let samples = (0..11025)
            .map(|i| 0.4 * (2.0 * PI * 440.0 * i as f32 / 22050.0).sin())
            .collect();
        let w = Waveform::new(samples, 22050).unwrap();
        let ex = FeatureExtractor::new(cfg()).unwrap();
        let lin = ex.linspec(&w).unwrap();
        let rec = griffin_lim(&lin, &cfg(), 30, 0).unwrap();
        let r = ncc(&envelope(&w), &envelope(&rec));
        assert!(r > 0.9, "envelope ncc {r}");
    }

    #[test]
    fn zero_spectrogram_gives_silence() {
        let lin = LinearSpectrogram {
            frames: Frames::zeros(10, 513),
        };
        let w = griffin_lim(&lin, &cfg(), 5, 0).unwrap();
        assert_eq!(w.len(), 9 * 256);
        assert!(w.samples.iter().all(|s| s.abs() < 1e-6));
    }

    #[test]
    fn error_does_not_grow_with_iterations() {
        let w = speechlike();
        let lin = FeatureExtractor::new(cfg()).unwrap().linspec(&w).unwrap();
        let e1 = spectral_error(&lin, &griffin_lim(&lin, &cfg(), 1, 3).unwrap());
        let e60 = spectral_error(&lin, &griffin_lim(&lin, &cfg(), 60, 3).unwrap());
        assert!(e60 <= e1, "1 iter {e1}, 60 iters {e60}");
    }

    #[test]
    fn deterministic_for_seed() {
        let w = speechlike();
        let lin = FeatureExtractor::new(cfg()).unwrap().linspec(&w).unwrap();
        let a = griffin_lim(&lin, &cfg(), 3, 9).unwrap();
        let b = griffin_lim(&lin, &cfg(), 3, 9).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_zero_iterations() {
        let lin = LinearSpectrogram {
            frames: Frames::zeros(2, 513),
        };
        assert!(griffin_lim(&lin, &cfg(), 0, 0).is_err());
    }
}
