//! Deterministic synthetic speech with known phone transcripts.
//!
//! Each phone is a spectral envelope: vowels and nasals are harmonic series
//! shaped by three resonances, fricatives are noise bands. Speakers differ in
//! pitch and in a global formant scale. Transcripts and durations depend only
//! on the seed and utterance index, so two speakers generated with the same
//! seed form a parallel, frame-aligned corpus.

use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::features::wav::write_wav;
use crate::features::{n_frames_for, FeatureConfig, Waveform};
use crate::manifest::{Manifest, ManifestRecord};

#[derive(Debug, Clone, Copy)]
enum Source {
    Silence,
    /// (formants in Hz, gain).
    Voiced([f64; 3], f64),
    /// (band edges in Hz, gain).
    Noise(f64, f64, f64),
}

/// Phones used by the toy corpus, all drawn from the TIMIT inventory.
const PHONES: &[(&str, Source)] = &[
    ("aa", Source::Voiced([730.0, 1090.0, 2440.0], 1.0)),
    ("iy", Source::Voiced([270.0, 2290.0, 3010.0], 1.0)),
    ("uw", Source::Voiced([300.0, 870.0, 2240.0], 1.0)),
    ("ae", Source::Voiced([660.0, 1720.0, 2410.0], 1.0)),
    ("er", Source::Voiced([490.0, 1350.0, 1690.0], 1.0)),
    ("m", Source::Voiced([250.0, 1250.0, 2600.0], 0.35)),
    ("n", Source::Voiced([250.0, 1700.0, 2600.0], 0.35)),
    ("s", Source::Noise(4500.0, 7500.0, 0.5)),
    ("sh", Source::Noise(2200.0, 4500.0, 0.6)),
    ("f", Source::Noise(1200.0, 7500.0, 0.2)),
];

const SILENCE: &str = "h#";

/// Phone symbols the toy corpus can emit, including the silence marker.
pub fn toy_phones() -> Vec<&'static str> {
    std::iter::once(SILENCE)
        .chain(PHONES.iter().map(|p| p.0))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToySpeaker {
    pub id: String,
    pub f0_hz: f64,
    pub formant_scale: f64,
}

impl ToySpeaker {
    /// Low-pitched reference voice.
    pub fn a() -> Self {
        Self {
            id: "spkA".into(),
            f0_hz: 120.0,
            formant_scale: 1.0,
        }
    }

    /// Higher pitch and formants.
    pub fn b() -> Self {
        Self {
            id: "spkB".into(),
            f0_hz: 210.0,
            formant_scale: 1.15,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ToyUtterance {
    pub utt_id: String,
    pub speaker: String,
    pub phones: Vec<String>,
    /// Phone index into `phones` for every feature frame.
    pub frame_phone: Vec<usize>,
    pub waveform: Waveform,
}

impl ToyUtterance {
    pub fn transcript(&self) -> String {
        self.phones.join(" ")
    }
}

const SR: f64 = 22050.0;
const FADE: usize = 96;

fn envelope(f: f64, formants: &[f64; 3]) -> f64 {
    const BW: [f64; 3] = [90.0, 110.0, 160.0];
    const GAIN: [f64; 3] = [1.0, 0.6, 0.3];
    // Squared so that valleys sit well below the peaks after log compression.
    let e: f64 = (0..3)
        .map(|i| GAIN[i] / (1.0 + ((f - formants[i]) / BW[i]).powi(2)))
        .sum();
    e * e
}

/// Utterance `index` for `speaker`. Frame-level phone alignment follows the
/// feature framing of `cfg` (hop-sized phone segments, centered frames).
pub fn toy_utterance(speaker: &ToySpeaker, index: usize, seed: u64, cfg: &FeatureConfig) -> Result<ToyUtterance> {
    let mut layout_rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9e37_79b9).wrapping_add(index as u64));
    let n_inner = layout_rng.gen_range(4..=6);
    let mut seq: Vec<usize> = Vec::new();
    while seq.len() < n_inner {
        let p = layout_rng.gen_range(0..PHONES.len());
        if seq.last() != Some(&p) {
            seq.push(p);
        }
    }
    let hop = cfg.hop_length;
    // (symbol, source, frames)
    let mut segments: Vec<(&str, Source, usize)> = vec![(SILENCE, Source::Silence, 4)];
    for &p in &seq {
        segments.push((PHONES[p].0, PHONES[p].1, layout_rng.gen_range(5..=9)));
    }
    segments.push((SILENCE, Source::Silence, 4));
    let jitter = layout_rng.gen_range(-0.03..0.03);

    // Acoustic randomness depends on the speaker as well.
    let spk_salt = speaker.id.bytes().fold(0u64, |h, b| h.wrapping_mul(31).wrapping_add(b as u64));
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ spk_salt ^ ((index as u64) << 20));

    let total: usize = segments.iter().map(|s| s.2 * hop).sum();
    let mut samples = vec![0.0f64; total];
    let f0_base = speaker.f0_hz * (1.0 + jitter);
    let n_harm = (7600.0 / (f0_base * 0.9)) as usize;
    let mut phase = vec![0.0f64; n_harm];
    let noise_grid: Vec<f64> = (1..).map(|k| k as f64 * 40.0).take_while(|&f| f < 8000.0).collect();
    let noise_phase: Vec<f64> = noise_grid.iter().map(|_| rng.gen_range(0.0..2.0 * PI)).collect();

    // Per-segment target amplitudes; crossfaded linearly across boundaries.
    let harm_amp = |src: &Source, f0: f64| -> Vec<f64> {
        match src {
            Source::Voiced(fm, g) => {
                let fm = fm.map(|f| f * speaker.formant_scale);
                (1..=n_harm)
                    .map(|k| {
                        let f = k as f64 * f0;
                        if f > 7600.0 {
                            0.0
                        } else {
                            g * envelope(f, &fm) / (k as f64).sqrt()
                        }
                    })
                    .collect()
            }
            _ => vec![0.0; n_harm],
        }
    };
    let noise_amp = |src: &Source| -> Vec<f64> {
        match src {
            Source::Noise(lo, hi, g) => {
                let (lo, hi) = (lo * speaker.formant_scale, (hi * speaker.formant_scale).min(7900.0));
                noise_grid
                    .iter()
                    .map(|&f| if f >= lo && f <= hi { g * 0.12 } else { 0.0 })
                    .collect()
            }
            _ => vec![0.0; noise_grid.len()],
        }
    };
    let harm: Vec<Vec<f64>> = segments.iter().map(|s| harm_amp(&s.1, f0_base)).collect();
    let noise: Vec<Vec<f64>> = segments.iter().map(|s| noise_amp(&s.1)).collect();

    let mut start = 0;
    for (si, seg) in segments.iter().enumerate() {
        let len = seg.2 * hop;
        for i in 0..len {
            let n = start + i;
            // Weight of the neighbouring segment near each boundary.
            let (other, w) = if i < FADE && si > 0 {
                (si - 1, 0.5 * (1.0 - i as f64 / FADE as f64))
            } else if len - i <= FADE && si + 1 < segments.len() {
                (si + 1, 0.5 * (1.0 - (len - i) as f64 / FADE as f64))
            } else {
                (si, 0.0)
            };
            let t = n as f64 / SR;
            let f0 = f0_base * (1.0 + 0.04 * (2.0 * PI * 1.5 * t).sin());
            let mut x = 0.0;
            for k in 0..n_harm {
                phase[k] += 2.0 * PI * (k + 1) as f64 * f0 / SR;
                let a = (1.0 - w) * harm[si][k] + w * harm[other][k];
                if a > 0.0 {
                    x += a * phase[k].sin();
                }
            }
            for (j, &f) in noise_grid.iter().enumerate() {
                let a = (1.0 - w) * noise[si][j] + w * noise[other][j];
                if a > 0.0 {
                    x += a * (2.0 * PI * f * t + noise_phase[j]).sin();
                }
            }
            samples[n] = x;
        }
        start += len;
    }
    let peak = samples.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-9);
    let samples: Vec<f32> = samples.iter().map(|v| (0.5 * v / peak) as f32).collect();

    // Frame t is centered on sample t * hop.
    let n_frames = n_frames_for(total, hop);
    let mut bounds = Vec::new();
    let mut acc = 0;
    for s in &segments {
        acc += s.2 * hop;
        bounds.push(acc);
    }
    let frame_phone = (0..n_frames)
        .map(|t| bounds.iter().position(|&b| t * hop < b).unwrap_or(segments.len() - 1))
        .collect();

    Ok(ToyUtterance {
        utt_id: format!("{}_{index:03}", speaker.id),
        speaker: speaker.id.clone(),
        phones: segments.iter().map(|s| s.0.to_string()).collect(),
        frame_phone,
        waveform: Waveform::new(samples, SR as u32)?,
    })
}

pub fn toy_corpus(speaker: &ToySpeaker, n: usize, seed: u64, cfg: &FeatureConfig) -> Result<Vec<ToyUtterance>> {
    (0..n).map(|i| toy_utterance(speaker, i, seed, cfg)).collect()
}

/// Writes `n` utterances per speaker as WAV files under `dir` plus
/// `dir/manifest.jsonl`; returns the manifest.
pub fn write_toy_corpus(dir: &Path, speakers: &[ToySpeaker], n: usize, seed: u64, cfg: &FeatureConfig) -> Result<Manifest> {
    std::fs::create_dir_all(dir.join("wav"))?;
    let mut records = Vec::new();
    for spk in speakers {
        for utt in toy_corpus(spk, n, seed, cfg)? {
            let rel = Path::new("wav").join(format!("{}.wav", utt.utt_id));
            write_wav(&dir.join(&rel), &utt.waveform)?;
            records.push(ManifestRecord {
                utt_id: utt.utt_id.clone(),
                audio: rel,
                speaker: spk.id.clone(),
                transcript: Some(utt.transcript()),
            });
        }
    }
    let manifest = Manifest::new(records, dir)?;
    manifest.save(&dir.join("manifest.jsonl"))?;
    Ok(manifest)
}
