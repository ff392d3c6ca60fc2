use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecayStrategy {
    Linear,
    Exponential,
}

/// Entropy-bonus coefficient as a function of the training iteration.
///
/// Linear: `max(min, start - decay * t)`. Exponential: geometric
/// interpolation from `start` to `min` over `steps` iterations.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EntropySchedule {
    pub strategy: DecayStrategy,
    pub start: f64,
    #[serde(default)]
    pub decay: f64,
    #[serde(default)]
    pub steps: u64,
    pub min: f64,
}

impl EntropySchedule {
    pub fn linear(start: f64, decay: f64, min: f64) -> Self {
        EntropySchedule {
            strategy: DecayStrategy::Linear,
            start,
            decay,
            steps: 0,
            min,
        }
    }

    pub fn exponential(start: f64, steps: u64, min: f64) -> Self {
        EntropySchedule {
            strategy: DecayStrategy::Exponential,
            start,
            decay: steps as f64,
            steps,
            min,
        }
    }

    pub fn validate(&self) -> crate::Result<()> {
        let ok = self.start.is_finite()
            && self.min.is_finite()
            && self.min >= 0.0
            && self.min <= self.start
            && self.decay >= 0.0
            && (self.strategy == DecayStrategy::Linear || (self.steps > 0 && self.min > 0.0));
        if ok {
            Ok(())
        } else {
            Err(crate::error::config(format!("invalid entropy schedule {self:?}")))
        }
    }

    pub fn coef(&self, iteration: u64) -> f64 {
        match self.strategy {
            DecayStrategy::Linear => (self.start - self.decay * iteration as f64).max(self.min),
            DecayStrategy::Exponential => {
                let frac = iteration.min(self.steps) as f64 / self.steps as f64;
                (self.start * (self.min / self.start).powf(frac)).max(self.min)
            }
        }
    }
}
