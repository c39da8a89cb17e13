use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Probability of feeding the true previous frame to the decoder, decaying
/// linearly from `start_rate` to `final_rate` over `decay_steps`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduledSampling {
    pub start_rate: f64,
    pub final_rate: f64,
    pub decay_steps: usize,
}

impl ScheduledSampling {
    pub fn new(decay_steps: usize) -> Self {
        Self {
            start_rate: 1.0,
            final_rate: 0.33,
            decay_steps,
        }
    }

    /// Plain teacher forcing.
    pub fn teacher_forcing() -> Self {
        Self {
            start_rate: 1.0,
            final_rate: 1.0,
            decay_steps: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |r: f64| r > 0.0 && r <= 1.0;
        if !ok(self.start_rate) || !ok(self.final_rate) || self.final_rate > self.start_rate {
            return Err(Error::InvalidConfig(format!(
                "sampling rates must satisfy 0 < final ({}) <= start ({}) <= 1",
                self.final_rate, self.start_rate
            )));
        }
        Ok(())
    }

    pub fn rate_at(&self, step: usize) -> f64 {
        if step >= self.decay_steps {
            return self.final_rate;
        }
        let frac = step as f64 / self.decay_steps as f64;
        self.start_rate + (self.final_rate - self.start_rate) * frac
    }
}
