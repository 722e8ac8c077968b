use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `base_lr · gamma^(number of milestones <= epoch)`.
pub fn lr_at_epoch(base_lr: f64, milestones: &[usize], gamma: f64, epoch: usize) -> f64 {
    let passed = milestones.iter().filter(|&&m| m <= epoch).count();
    base_lr * gamma.powi(passed as i32)
}

/// Step-decay learning rate schedule with fixed milestones.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MultiStepLr {
    pub base_lr: f64,
    pub milestones: Vec<usize>,
    pub gamma: f64,
}

impl MultiStepLr {
    pub fn new(base_lr: f64, milestones: Vec<usize>, gamma: f64) -> Result<Self> {
        let s = MultiStepLr {
            base_lr,
            milestones,
            gamma,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.base_lr > 0.0 && self.base_lr.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate must be positive, got {}",
                self.base_lr
            )));
        }
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(Error::Config(format!(
                "gamma must be positive, got {}",
                self.gamma
            )));
        }
        if self.milestones.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config(format!(
                "milestones must be strictly increasing: {:?}",
                self.milestones
            )));
        }
        Ok(())
    }

    pub fn lr(&self, epoch: usize) -> f64 {
        lr_at_epoch(self.base_lr, &self.milestones, self.gamma, epoch)
    }
}
