use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ScheduleKind {
    Constant,
    #[default]
    Cosine,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LRSchedule {
    #[serde(default)]
    pub kind: ScheduleKind,
    /// Horizon in optimizer steps. `None` means "the whole run".
    #[serde(default)]
    pub total_steps: Option<usize>,
    #[serde(default = "default_lr_min")]
    pub lr_min: f64,
}

fn default_lr_min() -> f64 {
    1e-5
}

impl Default for LRSchedule {
    fn default() -> Self {
        Self {
            kind: ScheduleKind::Cosine,
            total_steps: None,
            lr_min: default_lr_min(),
        }
    }
}

impl LRSchedule {
    pub fn constant() -> Self {
        Self {
            kind: ScheduleKind::Constant,
            total_steps: None,
            lr_min: 0.0,
        }
    }

    pub fn validate(&self, eta0: f64) -> Result<()> {
        if self.total_steps == Some(0) {
            return Err(invalid("total_steps", "must be >= 1"));
        }
        if self.kind == ScheduleKind::Cosine && !(self.lr_min >= 0.0 && self.lr_min <= eta0) {
            return Err(invalid(
                "lr_min",
                format!("must lie in [0, eta0 = {eta0}], got {}", self.lr_min),
            ));
        }
        Ok(())
    }

    /// Learning rate at `step` with the horizon resolved to `horizon` when unset.
    /// Steps past the horizon stay at the final value.
    pub fn lr_at(&self, step: usize, eta0: f64, horizon: usize) -> f64 {
        match self.kind {
            ScheduleKind::Constant => eta0,
            ScheduleKind::Cosine => {
                let total = self.total_steps.unwrap_or(horizon).max(1);
                cosine_lr(step.min(total), total, self.lr_min, eta0)
                    .expect("step clamped to horizon")
            }
        }
    }
}

/// `lr_min + (eta0 − lr_min)·(1 + cos(π·step/total))/2`.
pub fn cosine_lr(step: usize, total_steps: usize, lr_min: f64, eta0: f64) -> Result<f64> {
    if total_steps == 0 || step > total_steps {
        return Err(Error::StepOutOfRange {
            step,
            total: total_steps,
        });
    }
    if step == total_steps {
        return Ok(lr_min);
    }
    let frac = step as f64 / total_steps as f64;
    Ok(lr_min + (eta0 - lr_min) * 0.5 * (1.0 + (std::f64::consts::PI * frac).cos()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn cosine_endpoints_and_midpoint() {
        assert_eq!(cosine_lr(0, 1000, 1e-5, 1e-3).unwrap(), 1e-3);
        assert_eq!(cosine_lr(1000, 1000, 1e-5, 1e-3).unwrap(), 1e-5);
        assert_relative_eq!(
            cosine_lr(500, 1000, 1e-5, 1e-3).unwrap(),
            (1e-3 + 1e-5) / 2.0,
            epsilon = 1e-15
        );
    }

    #[test]
    fn cosine_rejects_out_of_range() {
        assert!(matches!(
            cosine_lr(11, 10, 0.0, 1.0),
            Err(Error::StepOutOfRange { .. })
        ));
        assert!(cosine_lr(0, 0, 0.0, 1.0).is_err());
    }

    #[test]
    fn cosine_is_non_increasing() {
        let mut prev = f64::INFINITY;
        for s in 0..=200 {
            let lr = cosine_lr(s, 200, 1e-4, 0.1).unwrap();
            assert!(lr <= prev);
            prev = lr;
        }
    }

    #[test]
    fn schedule_holds_final_value_past_horizon() {
        let s = LRSchedule {
            kind: ScheduleKind::Cosine,
            total_steps: Some(10),
            lr_min: 0.01,
        };
        assert_eq!(s.lr_at(25, 0.1, 100), 0.01);
        assert_eq!(LRSchedule::constant().lr_at(25, 0.1, 100), 0.1);
    }

    #[test]
    fn validation() {
        let s = LRSchedule {
            lr_min: 2.0,
            ..Default::default()
        };
        assert!(s.validate(1.0).is_err());
        assert!(LRSchedule::default().validate(1e-3).is_ok());
    }
}
