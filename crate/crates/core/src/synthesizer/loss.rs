use candle_core::Tensor;

use crate::error::{Error, Result};
use crate::features::Frames;

/// Masked mean absolute error between `[B, T, C]` tensors; `mask` is `[B, T, 1]`.
pub(crate) fn masked_l1(pred: &Tensor, target: &Tensor, mask: &Tensor) -> Result<Tensor> {
    let c = pred.dim(2)? as f64;
    let count = mask.sum_all()?;
    let err = (pred - target)?.abs()?.broadcast_mul(mask)?.sum_all()?;
    Ok(err.div(&(count * c)?)?)
}

/// Synthesizer loss: mean L1 on mel plus mean L1 on the linear spectrogram,
/// equally weighted.
pub fn taco_loss(
    pred_mel: &Frames,
    pred_lin: &Frames,
    true_mel: &Frames,
    true_lin: &Frames,
) -> Result<f32> {
    if pred_mel.n_frames() != true_mel.n_frames() || pred_lin.n_frames() != true_lin.n_frames() {
        return Err(Error::Shape(format!(
            "prediction has {}/{} frames, target {}/{}",
            pred_mel.n_frames(),
            pred_lin.n_frames(),
            true_mel.n_frames(),
            true_lin.n_frames()
        )));
    }
    Ok(pred_mel.mean_l1(true_mel)? + pred_lin.mean_l1(true_lin)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frames(t: usize, c: usize, v: f32) -> Frames {
        Frames::new(vec![v; t * c], t, c).unwrap()
    }

    #[test]
    fn zero_when_equal() {
        let m = frames(4, 80, 0.3);
        let l = frames(4, 513, 0.6);
        assert_eq!(taco_loss(&m, &l, &m, &l).unwrap(), 0.0);
    }

    #[test]
    fn constant_offset() {
        let (m, l) = (frames(4, 80, 0.3), frames(4, 513, 0.6));
        let (m2, l2) = (frames(4, 80, 0.4), frames(4, 513, 0.7));
        let loss = taco_loss(&m2, &l2, &m, &l).unwrap();
        assert!((loss - 0.2).abs() < 1e-6);
        // Doubling only the linear error doubles only the linear term.
        let l3 = frames(4, 513, 0.8);
        let loss3 = taco_loss(&m2, &l3, &m, &l).unwrap();
        assert!((loss3 - 0.3).abs() < 1e-6);
    }

    #[test]
    fn shape_mismatch() {
        let (m, l) = (frames(4, 80, 0.3), frames(4, 513, 0.6));
        let m5 = frames(5, 80, 0.3);
        assert!(taco_loss(&m5, &l, &m, &l).is_err());
    }

    #[test]
    fn masked_l1_ignores_padding() {
        let dev = &crate::nn::DEVICE;
        let pred = Tensor::new(&[[[1.0f32], [5.0]]], dev).unwrap();
        let target = Tensor::new(&[[[0.0f32], [0.0]]], dev).unwrap();
        let mask = Tensor::new(&[[[1.0f32], [0.0]]], dev).unwrap();
        let v = masked_l1(&pred, &target, &mask).unwrap().to_scalar::<f32>().unwrap();
        assert_eq!(v, 1.0);
    }
}
