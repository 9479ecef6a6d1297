use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// SGD with momentum and L2 weight decay on a piecewise-constant schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Divide the rate by this factor at every milestone.
    pub drop_factor: f64,
    /// Fractions of the total epoch count at which the rate drops.
    pub milestones: Vec<f64>,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.05,
            momentum: 0.9,
            weight_decay: 0.005,
            drop_factor: 10.0,
            milestones: vec![0.6, 0.8],
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "learning rate must be finite and >= 0, got {}",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidArgument(format!(
                "momentum must lie in [0, 1), got {}",
                self.momentum
            )));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "weight decay must be >= 0, got {}",
                self.weight_decay
            )));
        }
        if !(self.drop_factor >= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "drop factor must be >= 1, got {}",
                self.drop_factor
            )));
        }
        Ok(())
    }

    /// Rate for 0-based `epoch` out of `total` epochs.
    pub fn rate_at(&self, epoch: usize, total: usize) -> f64 {
        let drops = self
            .milestones
            .iter()
            .filter(|&&m| epoch as f64 >= (m * total as f64).round())
            .count();
        self.learning_rate / self.drop_factor.powi(drops as i32)
    }
}

/// Velocity buffers, one per parameter slot.
#[derive(Debug, Clone, Default)]
pub struct OptimizerState {
    velocity: Vec<Vec<f64>>,
}

impl OptimizerState {
    /// `v = mu v - lr (g + wd w)`, then `w += v`.
    pub fn step(
        &mut self,
        slot: usize,
        params: &mut [f64],
        grad: &[f64],
        lr: f64,
        cfg: &OptimizerConfig,
        decay: bool,
    ) {
        if self.velocity.len() <= slot {
            self.velocity.resize(slot + 1, Vec::new());
        }
        let v = &mut self.velocity[slot];
        if v.len() != params.len() {
            *v = vec![0.0; params.len()];
        }
        let wd = if decay { cfg.weight_decay } else { 0.0 };
        for ((w, g), vel) in params.iter_mut().zip(grad).zip(v.iter_mut()) {
            *vel = cfg.momentum * *vel - lr * (g + wd * *w);
            *w += *vel;
        }
    }
}
