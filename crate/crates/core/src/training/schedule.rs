use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleConfig {
    pub base_lr: f64,
    pub power: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Training-set size; filled in from the dataset when a run starts.
    pub num_images: usize,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            base_lr: 0.005,
            power: 0.9,
            epochs: 30,
            batch_size: 4,
            num_images: 0,
        }
    }
}

impl ScheduleConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch_size must be at least 1".into()));
        }
        if !(self.base_lr >= 0.0 && self.base_lr.is_finite()) || !(0.0..).contains(&self.power) {
            return Err(Error::InvalidArgument(format!(
                "schedule base_lr {} and power {} must be finite and non-negative",
                self.base_lr, self.power
            )));
        }
        Ok(())
    }

    /// Optimizer steps actually taken: `num_images · epochs / batch_size`.
    pub fn iterations(&self) -> u64 {
        (self.num_images * self.epochs / self.batch_size.max(1)) as u64
    }

    /// Schedule horizon, never below one.
    pub fn total_iters(&self) -> u64 {
        self.iterations().max(1)
    }
}

/// `base_lr · (1 − iters / total_iters)^power`; iterations past the horizon give 0.
pub fn poly_lr(iters: u64, sched: &ScheduleConfig) -> f64 {
    let total = sched.total_iters();
    if iters > total {
        log::warn!("iteration {iters} is past the schedule horizon {total}; learning rate clamped to 0");
        return 0.0;
    }
    sched.base_lr * (1.0 - iters as f64 / total as f64).powf(sched.power)
}
