//! Learning-rate schedules as pure functions of `(config, step)`, and the LR range test.

mod lrrt;

pub use lrrt::{
    analyze_lrrt, run_lr_range_test, LrrtConfig, LrrtRecord, LrrtReport, LrrtSummary, Trainable,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ScheduleError {
    #[error("step {step} outside 0..={total}")]
    StepOutOfRange { step: u64, total: u64 },
    #[error("invalid schedule: {0}")]
    Invalid(String),
    #[error("range test needs at least {needed} records, got {got}")]
    TooFewRecords { needed: usize, got: usize },
    #[error("no usable range: the smoothed loss never descends")]
    NoUsableRange,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    Multistep,
    Oclr,
    Cyclic,
    CosineRestarts,
}

/// Shape of the one-cycle decay phase.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecayShape {
    #[default]
    Cosine,
    Linear,
}

fn default_gamma() -> f64 {
    0.5
}
fn default_cycle_fraction() -> f64 {
    0.3
}
fn default_t_mult() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleConfig {
    pub kind: ScheduleKind,
    pub total_steps: u64,
    pub base_lr: f64,
    pub max_lr: f64,
    pub final_lr: f64,
    /// Multistep: steps at which the rate is multiplied by `gamma` (applies at the step itself).
    #[serde(default)]
    pub milestones: Vec<u64>,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    /// One-cycle: fraction of `total_steps` spent rising and falling back to `base_lr`.
    #[serde(default = "default_cycle_fraction")]
    pub cycle_fraction: f64,
    #[serde(default)]
    pub decay_shape: DecayShape,
    /// Cyclic: half-period in steps.
    #[serde(default)]
    pub step_size: u64,
    /// Cosine restarts: first period and period growth factor.
    #[serde(default)]
    pub t0: u64,
    #[serde(default = "default_t_mult")]
    pub t_mult: f64,
}

impl ScheduleConfig {
    /// Constant 4e-4 for 50k steps, then halved every 25k steps until 160k.
    pub fn multistep_baseline() -> Self {
        Self::multistep(
            160_000,
            4e-4,
            vec![50_000, 75_000, 100_000, 125_000, 150_000],
        )
    }

    pub fn multistep(total_steps: u64, base_lr: f64, milestones: Vec<u64>) -> Self {
        let final_lr = base_lr * 0.5f64.powi(milestones.len() as i32);
        Self {
            kind: ScheduleKind::Multistep,
            total_steps,
            base_lr,
            max_lr: base_lr,
            final_lr,
            milestones,
            gamma: 0.5,
            cycle_fraction: default_cycle_fraction(),
            decay_shape: DecayShape::Cosine,
            step_size: 0,
            t0: 0,
            t_mult: 1.0,
        }
    }

    /// The baseline's milestone pattern (50k, 75k, …, 150k of 160k) rescaled to `total_steps`.
    pub fn multistep_scaled(total_steps: u64, base_lr: f64) -> Self {
        let milestones = [50, 75, 100, 125, 150]
            .iter()
            .map(|m| (m * total_steps + 80) / 160)
            .collect();
        Self::multistep(total_steps, base_lr, milestones)
    }

    /// One-cycle with base = max/25, final = max/1e4 and a 30% cycle window.
    pub fn one_cycle(max_lr: f64, total_steps: u64) -> Self {
        Self {
            kind: ScheduleKind::Oclr,
            total_steps,
            base_lr: max_lr / 25.0,
            max_lr,
            final_lr: max_lr / 1e4,
            milestones: Vec::new(),
            gamma: 0.5,
            cycle_fraction: 0.3,
            decay_shape: DecayShape::Cosine,
            step_size: 0,
            t0: 0,
            t_mult: 1.0,
        }
    }

    pub fn cyclic(base_lr: f64, max_lr: f64, step_size: u64, total_steps: u64) -> Self {
        Self {
            kind: ScheduleKind::Cyclic,
            step_size,
            base_lr,
            max_lr,
            final_lr: base_lr,
            ..Self::one_cycle(max_lr, total_steps)
        }
    }

    pub fn cosine_restarts(base_lr: f64, max_lr: f64, t0: u64, t_mult: f64, total_steps: u64) -> Self {
        Self {
            kind: ScheduleKind::CosineRestarts,
            t0,
            t_mult,
            base_lr,
            max_lr,
            final_lr: base_lr,
            ..Self::one_cycle(max_lr, total_steps)
        }
    }

    pub fn validate(&self) -> Result<(), ScheduleError> {
        let bad = |m: &str| Err(ScheduleError::Invalid(m.to_string()));
        if self.total_steps == 0 {
            return bad("total_steps must be positive");
        }
        if !(self.base_lr > 0.0 && self.base_lr <= self.max_lr && self.max_lr.is_finite()) {
            return bad("need 0 < base_lr ≤ max_lr");
        }
        if !(self.final_lr > 0.0) {
            return bad("final_lr must be positive");
        }
        match self.kind {
            ScheduleKind::Multistep => {
                if self.milestones.windows(2).any(|w| w[0] >= w[1]) {
                    return bad("milestones must be strictly increasing");
                }
                if !(self.gamma > 0.0 && self.gamma <= 1.0) {
                    return bad("gamma must be in (0, 1]");
                }
            }
            ScheduleKind::Oclr => {
                if !(self.cycle_fraction > 0.0 && self.cycle_fraction <= 1.0) {
                    return bad("cycle_fraction must be in (0, 1]");
                }
            }
            ScheduleKind::Cyclic => {
                if self.step_size == 0 {
                    return bad("step_size must be positive");
                }
            }
            ScheduleKind::CosineRestarts => {
                if self.t0 == 0 || !(self.t_mult >= 1.0) {
                    return bad("need t0 ≥ 1 and t_mult ≥ 1");
                }
            }
        }
        Ok(())
    }

    fn oclr_marks(&self) -> (u64, u64) {
        let cycle_end = ((self.cycle_fraction * self.total_steps as f64).round() as u64)
            .clamp(1, self.total_steps);
        (cycle_end / 2, cycle_end)
    }

    /// Steps where the schedule changes phase; useful for sparse previews.
    pub fn breakpoints(&self) -> Vec<u64> {
        let mut marks = vec![0, self.total_steps];
        match self.kind {
            ScheduleKind::Multistep => marks.extend(&self.milestones),
            ScheduleKind::Oclr => {
                let (peak, end) = self.oclr_marks();
                marks.extend([peak, end]);
            }
            ScheduleKind::Cyclic => {
                let mut s = self.step_size;
                while s < self.total_steps {
                    marks.push(s);
                    s += self.step_size;
                }
            }
            ScheduleKind::CosineRestarts => {
                let (mut cursor, mut period) = (0u64, self.t0.max(1));
                while cursor < self.total_steps {
                    marks.push(cursor);
                    cursor += period;
                    period = next_period(period, self.t_mult);
                }
            }
        }
        marks.retain(|&m| m <= self.total_steps);
        marks.sort_unstable();
        marks.dedup();
        marks
    }
}

fn next_period(period: u64, t_mult: f64) -> u64 {
    ((period as f64 * t_mult).ceil() as u64).max(1)
}

/// Interpolate from `start` to `end`; endpoints are returned exactly.
fn anneal(start: f64, end: f64, frac: f64, shape: DecayShape) -> f64 {
    if frac <= 0.0 {
        return start;
    }
    if frac >= 1.0 {
        return end;
    }
    match shape {
        DecayShape::Cosine => end + (start - end) * 0.5 * (1.0 + (std::f64::consts::PI * frac).cos()),
        DecayShape::Linear => start + (end - start) * frac,
    }
}

fn frac(num: u64, den: u64) -> f64 {
    if den == 0 {
        1.0
    } else {
        num as f64 / den as f64
    }
}

/// Learning rate at `step` (0 ≤ step ≤ total_steps).
pub fn lr_at(cfg: &ScheduleConfig, step: u64) -> Result<f64, ScheduleError> {
    if step > cfg.total_steps {
        return Err(ScheduleError::StepOutOfRange {
            step,
            total: cfg.total_steps,
        });
    }
    let lr = match cfg.kind {
        ScheduleKind::Multistep => {
            let passed = cfg.milestones.iter().filter(|&&m| step >= m).count();
            cfg.base_lr * cfg.gamma.powi(passed as i32)
        }
        ScheduleKind::Oclr => {
            let (peak, cycle_end) = cfg.oclr_marks();
            let cos = DecayShape::Cosine;
            if step <= peak && peak > 0 {
                anneal(cfg.base_lr, cfg.max_lr, frac(step, peak), cos)
            } else if step <= cycle_end {
                // with no decay phase left, the fall lands directly on final_lr
                let floor = if cycle_end >= cfg.total_steps { cfg.final_lr } else { cfg.base_lr };
                anneal(cfg.max_lr, floor, frac(step - peak, cycle_end - peak), cos)
            } else {
                anneal(
                    cfg.base_lr,
                    cfg.final_lr,
                    frac(step - cycle_end, cfg.total_steps - cycle_end),
                    cfg.decay_shape,
                )
            }
        }
        ScheduleKind::Cyclic => {
            let s = cfg.step_size.max(1);
            let pos = step % (2 * s);
            if pos <= s {
                anneal(cfg.base_lr, cfg.max_lr, frac(pos, s), DecayShape::Linear)
            } else {
                anneal(cfg.max_lr, cfg.base_lr, frac(pos - s, s), DecayShape::Linear)
            }
        }
        ScheduleKind::CosineRestarts => {
            let (mut cursor, mut period) = (0u64, cfg.t0.max(1));
            while step >= cursor + period {
                cursor += period;
                period = next_period(period, cfg.t_mult);
            }
            anneal(cfg.max_lr, cfg.base_lr, frac(step - cursor, period), DecayShape::Cosine)
        }
    };
    Ok(lr)
}
