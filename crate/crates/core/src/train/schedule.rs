use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Two-phase step schedule for SGD with momentum.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainSchedule {
    pub base_lr: f64,
    pub lr_drop_factor: f64,
    pub phase1_epochs: usize,
    pub phase2_epochs: usize,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub seed: u64,
    /// Rescale the gradient to at most this global L2 norm.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clip_norm: Option<f64>,
}

impl Default for TrainSchedule {
    fn default() -> Self {
        Self {
            base_lr: 0.001,
            lr_drop_factor: 0.1,
            phase1_epochs: 30,
            phase2_epochs: 20,
            momentum: 0.9,
            weight_decay: 0.0005,
            batch_size: 8,
            seed: 0,
            clip_norm: None,
        }
    }
}

impl TrainSchedule {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn total_epochs(&self) -> usize {
        self.phase1_epochs + self.phase2_epochs
    }

    /// Learning rate for a 1-based epoch number.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        if epoch <= self.phase1_epochs {
            self.base_lr
        } else {
            self.base_lr * self.lr_drop_factor
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [self.base_lr, self.lr_drop_factor, self.momentum, self.weight_decay];
        if positive.iter().any(|v| !(v.is_finite() && *v >= 0.0)) || self.base_lr == 0.0 {
            return Err(Error::Parameter(format!("invalid schedule rates in {self:?}")));
        }
        if self.momentum >= 1.0 {
            return Err(Error::Parameter(format!("momentum {} must be below 1", self.momentum)));
        }
        if self.clip_norm.is_some_and(|c| !(c > 0.0)) {
            return Err(Error::Parameter("clip norm must be positive".into()));
        }
        if self.batch_size == 0 || self.total_epochs() == 0 {
            return Err(Error::Parameter("batch size and epoch count must be positive".into()));
        }
        Ok(())
    }
}
