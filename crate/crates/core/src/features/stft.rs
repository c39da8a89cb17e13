use std::f32::consts::PI;

use rustfft::FftPlanner;

pub use rustfft::num_complex::Complex32;

/// Periodic Hann window.
pub(crate) fn hann(n: usize) -> Vec<f32> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f32 / n as f32).cos())
        .collect()
}

/// Reflect-mode index into a signal of length `len`, valid for any integer.
fn reflect(i: isize, len: usize) -> usize {
    if len == 1 {
        return 0;
    }
    let period = 2 * (len as isize - 1);
    let m = i.rem_euclid(period);
    if m < len as isize {
        m as usize
    } else {
        (period - m) as usize
    }
}

/// Frames produced for a signal of `len` samples under center padding.
pub fn n_frames_for(len: usize, hop: usize) -> usize {
    len / hop + 1
}

/// Short-time Fourier transform with reflect center padding.
/// Returns `n_frames` rows of `n_fft / 2 + 1` bins.
pub fn stft(signal: &[f32], n_fft: usize, hop: usize) -> Vec<Vec<Complex32>> {
    let window = hann(n_fft);
    let fft = FftPlanner::<f32>::new().plan_fft_forward(n_fft);
    let pad = (n_fft / 2) as isize;
    let n_frames = n_frames_for(signal.len(), hop);
    let bins = n_fft / 2 + 1;
    let mut buf = vec![Complex32::new(0.0, 0.0); n_fft];
    let mut out = Vec::with_capacity(n_frames);
    for f in 0..n_frames {
        let start = (f * hop) as isize - pad;
        for (j, b) in buf.iter_mut().enumerate() {
            let x = signal[reflect(start + j as isize, signal.len())];
            *b = Complex32::new(x * window[j], 0.0);
        }
        fft.process(&mut buf);
        out.push(buf[..bins].to_vec());
    }
    out
}

/// Inverse STFT by weighted overlap-add; output has `length` samples.
pub fn istft(frames: &[Vec<Complex32>], n_fft: usize, hop: usize, length: usize) -> Vec<f32> {
    let window = hann(n_fft);
    let ifft = FftPlanner::<f32>::new().plan_fft_inverse(n_fft);
    let pad = n_fft / 2;
    let total = n_fft + hop * frames.len().saturating_sub(1);
    let mut acc = vec![0.0f32; total.max(length + pad)];
    let mut norm = vec![0.0f32; acc.len()];
    let mut buf = vec![Complex32::new(0.0, 0.0); n_fft];
    for (f, frame) in frames.iter().enumerate() {
        buf[..frame.len()].copy_from_slice(frame);
        // Hermitian completion for a real signal.
        for k in 1..n_fft - frame.len() + 1 {
            buf[n_fft - k] = frame[k].conj();
        }
        ifft.process(&mut buf);
        let offset = f * hop;
        for j in 0..n_fft {
            acc[offset + j] += buf[j].re / n_fft as f32 * window[j];
            norm[offset + j] += window[j] * window[j];
        }
    }
    (0..length)
        .map(|i| {
            let n = norm[i + pad];
            if n > 1e-8 {
                acc[i + pad] / n
            } else {
                0.0
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reflect_indices() {
        let idx: Vec<usize> = (-3..7).map(|i| reflect(i, 4)).collect();
        assert_eq!(idx, vec![3, 2, 1, 0, 1, 2, 3, 2, 1, 0]);
        assert_eq!(reflect(-5, 1), 0);
    }

    #[test]
    fn frame_count_formula() {
        for len in [1usize, 255, 256, 257, 1000, 22050] {
            assert_eq!(stft(&vec![0.1; len], 1024, 256).len(), len / 256 + 1);
        }
    }

    #[test]
    fn stft_istft_reconstructs() {
        let x: Vec<f32> = (0..4000).map(|i| ((i as f32) * 0.05).sin() * 0.5).collect();
        let spec = stft(&x, 1024, 256);
        let y = istft(&spec, 1024, 256, x.len());
        let err = x.iter().zip(&y).map(|(a, b)| (a - b).abs()).fold(0.0, f32::max);
        assert!(err < 1e-4, "max error {err}");
    }
}
