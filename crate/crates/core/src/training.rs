//! Shared pieces of the training loops.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Default)]
pub struct TrainReport {
    /// Loss after every step.
    pub losses: Vec<f32>,
    /// Utterances dropped before training, with the reason.
    pub skipped: Vec<(String, String)>,
}

impl TrainReport {
    pub fn final_loss(&self) -> Option<f32> {
        self.losses.last().copied()
    }

    /// Mean of the last `n` losses.
    pub fn tail_mean(&self, n: usize) -> f32 {
        let tail = &self.losses[self.losses.len().saturating_sub(n)..];
        tail.iter().sum::<f32>() / tail.len().max(1) as f32
    }
}

/// Deterministic epoch-shuffled minibatches.
pub struct BatchSampler {
    rng: ChaCha8Rng,
    order: Vec<usize>,
    pos: usize,
    n: usize,
}

impl BatchSampler {
    pub fn new(n: usize, seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            order: Vec::new(),
            pos: n,
            n,
        }
    }

    pub fn next_batch(&mut self, size: usize) -> Vec<usize> {
        let size = size.min(self.n).max(1);
        let mut out = Vec::with_capacity(size);
        while out.len() < size {
            if self.pos >= self.order.len() {
                self.order = (0..self.n).collect();
                self.order.shuffle(&mut self.rng);
                self.pos = 0;
            }
            out.push(self.order[self.pos]);
            self.pos += 1;
        }
        out
    }
}
