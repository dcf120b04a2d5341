use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Step learning-rate schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LRSchedule {
    pub initial_lr: f64,
    pub drop_factor: f64,
    pub drop_steps: Vec<usize>,
    pub total_steps: usize,
}

impl LRSchedule {
    pub fn new(initial_lr: f64, drop_factor: f64, drop_steps: Vec<usize>, total_steps: usize) -> Result<Self> {
        let s = Self {
            initial_lr,
            drop_factor,
            drop_steps,
            total_steps,
        };
        s.validate()?;
        Ok(s)
    }

    /// lr 0.001, x0.1 at 50,000, 60,000 steps: training f, g and fine-tuning.
    pub fn full_f() -> Self {
        Self {
            initial_lr: 0.001,
            drop_factor: 0.1,
            drop_steps: vec![50_000],
            total_steps: 60_000,
        }
    }

    /// The large-pool student: drop at 200,000, 430,000 steps.
    pub fn full_h() -> Self {
        Self {
            drop_steps: vec![200_000],
            total_steps: 430_000,
            ..Self::full_f()
        }
    }

    /// Segmentation fine-tuning: drop at 100,000, 160,000 steps.
    pub fn full_seg_ft() -> Self {
        Self {
            drop_steps: vec![100_000],
            total_steps: 160_000,
            ..Self::full_f()
        }
    }

    /// Segmentation student trained from scratch on pseudo-labels.
    pub fn full_seg_final() -> Self {
        Self {
            drop_steps: vec![250_000],
            total_steps: 300_000,
            ..Self::full_f()
        }
    }

    /// Same shape with every step count divided by `divisor` (rounded up).
    pub fn scaled(&self, divisor: usize) -> Self {
        let d = |s: usize| s.div_ceil(divisor);
        Self {
            initial_lr: self.initial_lr,
            drop_factor: self.drop_factor,
            drop_steps: self.drop_steps.iter().map(|&s| d(s)).collect(),
            total_steps: d(self.total_steps),
        }
    }

    /// Same drops, `factor` times the total steps ("until convergence").
    pub fn extended(&self, factor: usize) -> Self {
        Self {
            total_steps: self.total_steps * factor,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.initial_lr > 0.0 && self.initial_lr.is_finite()) {
            return Err(Error::InvalidArgument(format!("initial_lr must be positive, got {}", self.initial_lr)));
        }
        if !(self.drop_factor > 0.0 && self.drop_factor.is_finite()) {
            return Err(Error::InvalidArgument(format!("drop_factor must be positive, got {}", self.drop_factor)));
        }
        if self.drop_steps.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidArgument("drop_steps must be strictly increasing".into()));
        }
        if self.drop_steps.last().is_some_and(|&s| s >= self.total_steps) {
            return Err(Error::InvalidArgument("drop_steps must be below total_steps".into()));
        }
        Ok(())
    }
}

/// `initial_lr * drop_factor^k` where `k` counts the drops at or before `step`.
pub fn lr_at(schedule: &LRSchedule, step: usize) -> Result<f64> {
    if step >= schedule.total_steps {
        return Err(Error::InvalidArgument(format!(
            "lr_at: step {step} outside [0, {})",
            schedule.total_steps
        )));
    }
    let k = schedule.drop_steps.iter().filter(|&&s| s <= step).count();
    // Dividing by the reciprocal keeps decade drops exact (0.001 -> 1e-5).
    Ok(schedule.initial_lr / schedule.drop_factor.recip().powi(k as i32))
}

/// Optimization settings of one training stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub schedule: LRSchedule,
    pub batch_images: usize,
    pub pixels_per_image: usize,
    pub momentum: f64,
    pub seed: u64,
    /// Loss-trace window length.
    pub eval_every: usize,
}

impl Default for TrainConfig {
    /// Desk scale: the f schedule divided by ten, 8 images x 256 pixels.
    fn default() -> Self {
        Self {
            schedule: LRSchedule::full_f().scaled(10),
            batch_images: 8,
            pixels_per_image: 256,
            momentum: 0.9,
            seed: 0,
            eval_every: 100,
        }
    }
}

impl TrainConfig {
    pub fn with_schedule(schedule: LRSchedule) -> Self {
        Self {
            schedule,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.schedule.validate()?;
        if self.batch_images == 0 || self.pixels_per_image == 0 {
            return Err(Error::InvalidArgument(
                "batch_images and pixels_per_image must be at least 1".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidArgument(format!("momentum must lie in [0, 1), got {}", self.momentum)));
        }
        if self.eval_every == 0 {
            return Err(Error::InvalidArgument("eval_every must be at least 1".into()));
        }
        Ok(())
    }
}
