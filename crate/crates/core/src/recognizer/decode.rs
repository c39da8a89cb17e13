use super::{PhoneInventory, PhonemeSequence, Ppg};
use crate::error::{Error, Result};

/// Index of the largest value; ties go to the lowest index.
pub(crate) fn argmax(row: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Best-path CTC decoding: per-frame argmax, collapse repeats, drop blanks.
pub fn greedy_decode(ppg: &Ppg, blank: usize) -> PhonemeSequence {
    let mut labels = Vec::new();
    let mut prev = None;
    for row in ppg.frames.rows() {
        let k = argmax(row);
        if Some(k) != prev && k != blank {
            labels.push(k);
        }
        prev = Some(k);
    }
    PhonemeSequence { labels }
}

/// Unit-cost Levenshtein distance.
pub fn edit_distance<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, x) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(x != y);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

fn folded(seq: &PhonemeSequence, inv: &PhoneInventory) -> Vec<usize> {
    seq.labels.iter().filter_map(|&l| inv.fold(l)).collect()
}

/// Edit operations and reference length after folding both sides.
pub fn per_counts(
    reference: &PhonemeSequence,
    hypothesis: &PhonemeSequence,
    inv: &PhoneInventory,
) -> Result<(usize, usize)> {
    let r = folded(reference, inv);
    if r.is_empty() {
        return Err(Error::InvalidInput("reference is empty after folding".into()));
    }
    let h = folded(hypothesis, inv);
    Ok((edit_distance(&r, &h), r.len()))
}

/// Phone error rate: folded edit distance over folded reference length. May exceed 1.
pub fn per(reference: &PhonemeSequence, hypothesis: &PhonemeSequence, inv: &PhoneInventory) -> Result<f64> {
    let (edits, n) = per_counts(reference, hypothesis, inv)?;
    Ok(edits as f64 / n as f64)
}

/// Total edits over total reference length across `(reference, hypothesis)` pairs.
pub fn corpus_per(pairs: &[(PhonemeSequence, PhonemeSequence)], inv: &PhoneInventory) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::InvalidInput("no utterances to score".into()));
    }
    let (mut edits, mut n) = (0, 0);
    for (r, h) in pairs {
        let (e, len) = per_counts(r, h, inv)?;
        edits += e;
        n += len;
    }
    Ok(edits as f64 / n as f64)
}
