use serde::{Deserialize, Serialize};

use super::{Result, TrainError};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageSchedule {
    pub stage: u8,
    pub batch_size: usize,
    pub initial_lr: f64,
    /// Epochs (1-based) at which the learning rate halves.
    pub milestones: Vec<usize>,
    pub total_epochs: usize,
}

impl StageSchedule {
    pub fn stage1() -> Self {
        StageSchedule {
            stage: 1,
            batch_size: 32,
            initial_lr: 0.001,
            milestones: vec![150, 300],
            total_epochs: 500,
        }
    }

    pub fn stage2() -> Self {
        StageSchedule {
            stage: 2,
            batch_size: 16,
            initial_lr: 0.01,
            milestones: vec![100, 200],
            total_epochs: 300,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(TrainError::Schedule(m));
        if !(self.stage == 1 || self.stage == 2) {
            return err(format!("stage must be 1 or 2, got {}", self.stage));
        }
        if self.batch_size == 0 || self.total_epochs == 0 {
            return err("batch size and epoch count must be positive".into());
        }
        if !(self.initial_lr.is_finite() && self.initial_lr > 0.0) {
            return err(format!("initial lr must be positive, got {}", self.initial_lr));
        }
        if self.milestones.windows(2).any(|w| w[0] >= w[1]) {
            return err(format!("milestones must be strictly increasing: {:?}", self.milestones));
        }
        if self.milestones.iter().any(|&m| m == 0 || m >= self.total_epochs) {
            return err(format!("milestones must lie in 1..{}: {:?}", self.total_epochs, self.milestones));
        }
        Ok(())
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        lr_schedule(epoch, self)
    }
}

/// `initial_lr * 0.5^k`, `k` the number of milestones at or before `epoch`.
pub fn lr_schedule(epoch: usize, schedule: &StageSchedule) -> f64 {
    let k = schedule.milestones.iter().filter(|&&m| m <= epoch).count();
    schedule.initial_lr * 0.5f64.powi(k as i32)
}
