use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ScheduleKind {
    LinearDecay,
    Cosine,
    Step { period: usize, gamma: f64 },
}

/// Linear warmup over `warmup_steps`, then decay to the end of `total_steps`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScheduleConfig {
    pub kind: ScheduleKind,
    pub warmup_steps: usize,
    pub total_steps: usize,
    pub base_lr: f64,
}

impl ScheduleConfig {
    pub fn cosine(base_lr: f64, warmup_steps: usize, total_steps: usize) -> Self {
        Self {
            kind: ScheduleKind::Cosine,
            warmup_steps,
            total_steps,
            base_lr,
        }
    }

    pub fn linear(base_lr: f64, warmup_steps: usize, total_steps: usize) -> Self {
        Self {
            kind: ScheduleKind::LinearDecay,
            warmup_steps,
            total_steps,
            base_lr,
        }
    }

    /// `0 ≤ W < T` and a positive base rate. An all-zero length (`T = 0`) is
    /// accepted as the empty schedule.
    pub fn validate(&self) -> Result<()> {
        if !(self.base_lr > 0.0 && self.base_lr.is_finite()) {
            return Err(Error::invalid(format!(
                "base_lr must be positive, got {}",
                self.base_lr
            )));
        }
        if self.total_steps > 0 && self.warmup_steps >= self.total_steps {
            return Err(Error::invalid(format!(
                "warmup {} must be shorter than the schedule {}",
                self.warmup_steps, self.total_steps
            )));
        }
        if self.total_steps == 0 && self.warmup_steps != 0 {
            return Err(Error::invalid("an empty schedule cannot have warmup"));
        }
        if let ScheduleKind::Step { period, gamma } = self.kind {
            if period == 0 || gamma.is_nan() || gamma <= 0.0 {
                return Err(Error::invalid(
                    "step schedule needs period > 0 and gamma > 0",
                ));
            }
        }
        Ok(())
    }
}

/// Learning rate at `step` (`0 ≤ step ≤ T`).
pub fn lr_at_step(schedule: &ScheduleConfig, step: usize) -> Result<f64> {
    schedule.validate()?;
    let ScheduleConfig {
        kind,
        warmup_steps: w,
        total_steps: t,
        base_lr: base,
    } = *schedule;
    if step > t {
        return Err(Error::invalid(format!(
            "step {step} beyond schedule length {t}"
        )));
    }
    if step < w {
        return Ok(base * step as f64 / w as f64);
    }
    let span = (t - w) as f64;
    let done = (step - w) as f64;
    Ok(match kind {
        ScheduleKind::LinearDecay => base * ((t - step) as f64 / span),
        ScheduleKind::Cosine => base * 0.5 * (1.0 + (PI * done / span).cos()),
        ScheduleKind::Step { period, gamma } => base * gamma.powi(((step - w) / period) as i32),
    })
}

/// Training epochs for a dataset fraction `p ∈ [0.01, 1]`: linear in `p` between
/// 100 epochs at 1% and 2 epochs at 100%, rounded, never below 2.
pub fn schedule_len_for_fraction(p: f64) -> Result<usize> {
    if !(0.01..=1.0).contains(&p) {
        return Err(Error::invalid(format!("fraction {p} outside [0.01, 1]")));
    }
    let epochs = 100.0 + (p - 0.01) * (2.0 - 100.0) / (1.0 - 0.01);
    Ok((epochs.round() as usize).max(2))
}
