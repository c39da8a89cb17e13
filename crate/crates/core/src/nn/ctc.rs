//! Connectionist temporal classification loss.
//!
//! Forward-backward in log space on the host; the gradient with respect to the
//! per-frame log-probabilities is the negative state occupancy, which is fed
//! back into the graph through a surrogate `sum(log_probs * grad)` term.

use crate::error::{Error, Result};

fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// Minimum number of frames able to emit `labels` (repeats need a blank between).
pub fn min_frames(labels: &[usize]) -> usize {
    labels.len() + labels.windows(2).filter(|w| w[0] == w[1]).count()
}

/// Negative log-likelihood of `labels` and its gradient with respect to
/// `log_probs` (`[T][C]`, each row log-normalized).
pub fn ctc_loss_and_grad(
    log_probs: &[Vec<f32>],
    labels: &[usize],
    blank: usize,
) -> Result<(f64, Vec<Vec<f32>>)> {
    let t_len = log_probs.len();
    let required = min_frames(labels);
    if required > t_len {
        return Err(Error::CtcInfeasible {
            labels: labels.len(),
            required,
            frames: t_len,
        });
    }
    let n_classes = log_probs.first().map_or(0, |r| r.len());
    if labels.iter().any(|&l| l == blank || l >= n_classes) {
        return Err(Error::InvalidInput("label equals blank or is out of range".into()));
    }
    // Extended sequence: blank, l1, blank, l2, ..., blank.
    let ext: Vec<usize> = std::iter::once(blank)
        .chain(labels.iter().flat_map(|&l| [l, blank]))
        .collect();
    let s_len = ext.len();
    let lp = |t: usize, s: usize| log_probs[t][ext[s]] as f64;
    let skip_ok = |s: usize| s >= 2 && ext[s] != blank && ext[s] != ext[s - 2];

    let neg = f64::NEG_INFINITY;
    let mut alpha = vec![vec![neg; s_len]; t_len];
    alpha[0][0] = lp(0, 0);
    if s_len > 1 {
        alpha[0][1] = lp(0, 1);
    }
    for t in 1..t_len {
        for s in 0..s_len {
            let mut a = alpha[t - 1][s];
            if s >= 1 {
                a = log_add(a, alpha[t - 1][s - 1]);
            }
            if skip_ok(s) {
                a = log_add(a, alpha[t - 1][s - 2]);
            }
            alpha[t][s] = if a == neg { neg } else { a + lp(t, s) };
        }
    }
    let mut beta = vec![vec![neg; s_len]; t_len];
    beta[t_len - 1][s_len - 1] = lp(t_len - 1, s_len - 1);
    if s_len > 1 {
        beta[t_len - 1][s_len - 2] = lp(t_len - 1, s_len - 2);
    }
    for t in (0..t_len - 1).rev() {
        for s in 0..s_len {
            let mut b = beta[t + 1][s];
            if s + 1 < s_len {
                b = log_add(b, beta[t + 1][s + 1]);
            }
            if s + 2 < s_len && skip_ok(s + 2) {
                b = log_add(b, beta[t + 1][s + 2]);
            }
            beta[t][s] = if b == neg { neg } else { b + lp(t, s) };
        }
    }

    let mut log_p = alpha[t_len - 1][s_len - 1];
    if s_len > 1 {
        log_p = log_add(log_p, alpha[t_len - 1][s_len - 2]);
    }
    if !log_p.is_finite() {
        return Err(Error::InvalidInput("CTC path probability underflowed".into()));
    }

    let mut grad = vec![vec![0.0f32; n_classes]; t_len];
    for t in 0..t_len {
        let mut occ = vec![neg; n_classes];
        for s in 0..s_len {
            // alpha and beta both include the emission at t.
            let v = alpha[t][s] + beta[t][s] - lp(t, s);
            occ[ext[s]] = log_add(occ[ext[s]], v);
        }
        for (g, o) in grad[t].iter_mut().zip(occ) {
            *g = -(o - log_p).exp() as f32;
        }
    }
    Ok((-log_p, grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn log_softmax(row: &[f32]) -> Vec<f32> {
        let m = row.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
        let z: f32 = row.iter().map(|x| (x - m).exp()).sum();
        row.iter().map(|x| x - m - z.ln()).collect()
    }

    fn collapse(path: &[usize], blank: usize) -> Vec<usize> {
        let mut out = Vec::new();
        let mut prev = None;
        for &p in path {
            if Some(p) != prev && p != blank {
                out.push(p);
            }
            prev = Some(p);
        }
        out
    }

    /// Sums the probability of every frame path that collapses to `labels`.
    fn brute_force_nll(lp: &[Vec<f32>], labels: &[usize], blank: usize) -> f64 {
        let (t_len, c) = (lp.len(), lp[0].len());
        let mut total = 0.0f64;
        let mut path = vec![0usize; t_len];
        loop {
            if collapse(&path, blank) == labels {
                total += path
                    .iter()
                    .enumerate()
                    .map(|(t, &k)| lp[t][k] as f64)
                    .sum::<f64>()
                    .exp();
            }
            let mut i = 0;
            loop {
                if i == t_len {
                    return -total.ln();
                }
                path[i] += 1;
                if path[i] < c {
                    break;
                }
                path[i] = 0;
                i += 1;
            }
        }
    }

    fn random_lp(t: usize, c: usize, seed: u64) -> Vec<Vec<f32>> {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        (0..t)
            .map(|_| log_softmax(&(0..c).map(|_| rng.gen_range(-2.0..2.0)).collect::<Vec<_>>()))
            .collect()
    }

    #[test]
    fn matches_enumeration() {
        for (seed, labels) in [(1, vec![1, 2]), (2, vec![1, 1]), (3, vec![2]), (4, vec![1, 2, 1])] {
            let lp = random_lp(5, 3, seed);
            let (nll, _) = ctc_loss_and_grad(&lp, &labels, 0).unwrap();
            let oracle = brute_force_nll(&lp, &labels, 0);
            assert!((nll - oracle).abs() < 1e-5, "{labels:?}: {nll} vs {oracle}");
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let lp = random_lp(4, 3, 7);
        let labels = [1, 2];
        let (_, grad) = ctc_loss_and_grad(&lp, &labels, 0).unwrap();
        // Perturb raw log-probabilities (unnormalized directions are fine: the
        // loss is a polynomial in exp(lp)).
        let eps = 1e-3f32;
        for t in 0..4 {
            for k in 0..3 {
                let mut up = lp.clone();
                up[t][k] += eps;
                let mut dn = lp.clone();
                dn[t][k] -= eps;
                let fd = (brute_force_nll(&up, &labels, 0) - brute_force_nll(&dn, &labels, 0))
                    / (2.0 * eps as f64);
                assert!((fd - grad[t][k] as f64).abs() < 1e-3, "t{t} k{k}: {fd} vs {}", grad[t][k]);
            }
        }
    }

    #[test]
    fn occupancy_sums_to_one_per_frame() {
        let lp = random_lp(8, 4, 11);
        let (_, grad) = ctc_loss_and_grad(&lp, &[1, 3, 3, 2], 0).unwrap();
        for row in grad {
            let s: f32 = row.iter().sum();
            assert!((s + 1.0).abs() < 1e-5);
        }
    }

    #[test]
    fn infeasible_transcript() {
        let lp = random_lp(3, 3, 0);
        assert_eq!(min_frames(&[1, 1, 2]), 4);
        assert!(matches!(
            ctc_loss_and_grad(&lp, &[1, 1, 2], 0),
            Err(Error::CtcInfeasible { required: 4, frames: 3, .. })
        ));
    }
}
