use crate::{Error, Result};

/// Multi-step decay: the rate is multiplied by `gamma` once for every
/// milestone that has been reached.
#[derive(Debug, Clone, PartialEq)]
pub struct LrSchedule {
    base_lr: f64,
    milestones: Vec<u32>,
    gamma: f64,
}

impl LrSchedule {
    pub fn new(base_lr: f64, milestones: Vec<u32>, gamma: f64) -> Result<Self> {
        if !(base_lr > 0.0) || !base_lr.is_finite() {
            return Err(Error::Invalid(format!("base learning rate must be positive, got {base_lr}")));
        }
        if !(gamma > 0.0 && gamma <= 1.0) {
            return Err(Error::Invalid(format!("gamma must lie in (0, 1], got {gamma}")));
        }
        if milestones.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Invalid("milestones must be strictly increasing".into()));
        }
        Ok(Self { base_lr, milestones, gamma })
    }

    /// Milestones at 40%, 80% and 100% of the run, the same shape as
    /// decaying at epochs 80/160/200 of a 200-epoch run.
    pub fn proportional(base_lr: f64, epochs: u32, gamma: f64) -> Result<Self> {
        let mut ms: Vec<u32> = [0.4, 0.8, 1.0]
            .iter()
            .map(|f| ((epochs as f64) * f).round() as u32)
            .filter(|&m| m > 0)
            .collect();
        ms.dedup();
        Self::new(base_lr, ms, gamma)
    }

    pub fn base_lr(&self) -> f64 {
        self.base_lr
    }

    pub fn milestones(&self) -> &[u32] {
        &self.milestones
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn lr_at(&self, epoch: u32) -> f64 {
        let passed = self.milestones.iter().filter(|&&m| m <= epoch).count();
        self.base_lr * self.gamma.powi(passed as i32)
    }
}
