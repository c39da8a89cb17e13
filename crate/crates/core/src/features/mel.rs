use super::FeatureConfig;

const F_SP: f64 = 200.0 / 3.0;
const MIN_LOG_HZ: f64 = 1000.0;

fn log_step() -> f64 {
    6.4f64.ln() / 27.0
}

/// Slaney mel scale: linear below 1 kHz, logarithmic above.
pub fn hz_to_mel(hz: f64) -> f64 {
    if hz < MIN_LOG_HZ {
        hz / F_SP
    } else {
        MIN_LOG_HZ / F_SP + (hz / MIN_LOG_HZ).ln() / log_step()
    }
}

pub fn mel_to_hz(mel: f64) -> f64 {
    let min_log_mel = MIN_LOG_HZ / F_SP;
    if mel < min_log_mel {
        mel * F_SP
    } else {
        MIN_LOG_HZ * ((mel - min_log_mel) * log_step()).exp()
    }
}

/// Triangular, area-normalized filters stored sparsely per band.
#[derive(Debug, Clone)]
pub struct MelFilterbank {
    bands: Vec<Band>,
    n_bins: usize,
}

#[derive(Debug, Clone)]
struct Band {
    start: usize,
    weights: Vec<f32>,
    center_hz: f64,
    edges_hz: (f64, f64),
}

impl MelFilterbank {
    pub fn n_bands(&self) -> usize {
        self.bands.len()
    }

    pub fn n_bins(&self) -> usize {
        self.n_bins
    }

    pub fn center_hz(&self, band: usize) -> f64 {
        self.bands[band].center_hz
    }

    /// Lower and upper triangle corners in Hz.
    pub fn edges_hz(&self, band: usize) -> (f64, f64) {
        self.bands[band].edges_hz
    }

    /// Dense weight row for `band`.
    pub fn row(&self, band: usize) -> Vec<f32> {
        let b = &self.bands[band];
        let mut row = vec![0.0; self.n_bins];
        row[b.start..b.start + b.weights.len()].copy_from_slice(&b.weights);
        row
    }

    pub fn apply_band(&self, band: usize, magnitudes: &[f32]) -> f32 {
        let b = &self.bands[band];
        b.weights
            .iter()
            .zip(&magnitudes[b.start..])
            .map(|(w, m)| w * m)
            .sum()
    }
}

pub fn mel_filterbank(cfg: &FeatureConfig) -> MelFilterbank {
    let n_bins = cfg.n_fft / 2 + 1;
    let bin_hz = cfg.sample_rate as f64 / cfg.n_fft as f64;
    let (lo, hi) = (hz_to_mel(cfg.fmin as f64), hz_to_mel(cfg.fmax as f64));
    let points: Vec<f64> = (0..cfg.n_mels + 2)
        .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (cfg.n_mels + 1) as f64))
        .collect();

    let bands = (0..cfg.n_mels)
        .map(|m| {
            let (left, center, right) = (points[m], points[m + 1], points[m + 2]);
            let norm = 2.0 / (right - left);
            let mut start = None;
            let mut weights = Vec::new();
            for k in 0..n_bins {
                let f = k as f64 * bin_hz;
                let up = (f - left) / (center - left);
                let down = (right - f) / (right - center);
                let w = up.min(down).max(0.0) * norm;
                if w > 0.0 {
                    start.get_or_insert(k);
                    weights.push(w as f32);
                } else if start.is_some() {
                    break;
                }
            }
            Band {
                start: start.unwrap_or(0),
                weights,
                center_hz: center,
                edges_hz: (left, right),
            }
        })
        .collect();
    MelFilterbank { bands, n_bins }
}
