use std::path::Path;

use serde::{Deserialize, Serialize};

use super::ScheduleError;

/// Anything that can take one optimisation step at a given learning rate.
pub trait Trainable {
    type Batch;

    /// Run forward, backward and an optimiser update; return the batch loss.
    fn train_step(&mut self, batch: &Self::Batch, lr: f64) -> f64;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LrrtConfig {
    pub start_lr: f64,
    pub end_lr: f64,
    /// Optimisation steps taken at each learning rate before the next geometric increment.
    pub step_rate: usize,
    /// Total optimisation-step budget; the sweep reaches `end_lr` on the last increment.
    pub total_steps: usize,
    #[serde(default = "default_smoothing")]
    pub smoothing: f64,
    #[serde(default = "default_explosion")]
    pub explosion_factor: f64,
}

fn default_smoothing() -> f64 {
    0.98
}
fn default_explosion() -> f64 {
    4.0
}

impl Default for LrrtConfig {
    fn default() -> Self {
        Self {
            start_lr: 1e-7,
            end_lr: 1.0,
            step_rate: 1,
            total_steps: 1000,
            smoothing: default_smoothing(),
            explosion_factor: default_explosion(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LrrtRecord {
    pub step: usize,
    pub lr: f64,
    pub raw_loss: f64,
    pub smoothed_loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LrrtReport {
    pub records: Vec<LrrtRecord>,
    pub step_rate: usize,
    pub suggested_max_lr: f64,
    /// Record indices where the plateau ends and where the descent bottoms out.
    pub phase_boundaries: Option<(usize, usize)>,
    /// Learning rate at which the smoothed loss exceeded the explosion threshold.
    pub explosion_lr: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LrrtSummary {
    pub step_rate: usize,
    pub records: usize,
    pub suggested_max_lr: f64,
    pub explosion_lr: Option<f64>,
    pub plateau_end_step: Option<usize>,
    pub descent_end_step: Option<usize>,
}

impl LrrtReport {
    pub fn summary(&self) -> LrrtSummary {
        let step_of = |i: usize| self.records[i].step;
        LrrtSummary {
            step_rate: self.step_rate,
            records: self.records.len(),
            suggested_max_lr: self.suggested_max_lr,
            explosion_lr: self.explosion_lr,
            plateau_end_step: self.phase_boundaries.map(|(p, _)| step_of(p)),
            descent_end_step: self.phase_boundaries.map(|(_, d)| step_of(d)),
        }
    }

    /// CSV with header `step,lr,raw_loss,smoothed_loss`.
    pub fn to_csv(&self) -> Result<Vec<u8>, csv::Error> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &self.records {
            w.serialize(r)?;
        }
        w.into_inner().map_err(|e| e.into_error().into())
    }

    pub fn write(&self, csv_path: &Path, summary_path: &Path) -> std::io::Result<()> {
        let csv = self.to_csv().map_err(std::io::Error::other)?;
        crate::harness::write_atomic(csv_path, &csv)?;
        let json = serde_json::to_vec_pretty(&self.summary()).map_err(std::io::Error::other)?;
        crate::harness::write_atomic(summary_path, &json)
    }
}

/// Sweep the learning rate geometrically from `start_lr` to `end_lr`, one increment every
/// `step_rate` steps, recording a bias-corrected moving average of the loss. Stops once the
/// smoothed loss exceeds `explosion_factor ×` its best value or a loss is non-finite.
pub fn run_lr_range_test<M, I>(
    model: &mut M,
    data: I,
    cfg: &LrrtConfig,
) -> Result<LrrtReport, ScheduleError>
where
    M: Trainable,
    I: IntoIterator<Item = M::Batch>,
{
    if !(cfg.start_lr > 0.0 && cfg.start_lr < cfg.end_lr) {
        return Err(ScheduleError::Invalid("need 0 < start_lr < end_lr".into()));
    }
    if cfg.step_rate == 0 || cfg.total_steps / cfg.step_rate < 2 {
        return Err(ScheduleError::Invalid(
            "need step_rate ≥ 1 and at least two increments".into(),
        ));
    }
    if !(0.0..1.0).contains(&cfg.smoothing) {
        return Err(ScheduleError::Invalid("smoothing must be in [0, 1)".into()));
    }
    let increments = cfg.total_steps / cfg.step_rate;
    let log_ratio = (cfg.end_lr / cfg.start_lr).ln() / (increments - 1) as f64;
    let mut data = data.into_iter();

    let mut records = Vec::with_capacity(increments);
    let mut avg = 0.0;
    let mut best = f64::INFINITY;
    let mut step = 0usize;
    let mut explosion_lr = None;

    'sweep: for i in 0..increments {
        let lr = if i + 1 == increments {
            cfg.end_lr
        } else {
            cfg.start_lr * (log_ratio * i as f64).exp()
        };
        let mut raw_sum = 0.0;
        let mut taken = 0usize;
        let mut smoothed = f64::NAN;
        let mut exploded = false;
        for _ in 0..cfg.step_rate {
            let Some(batch) = data.next() else {
                if taken > 0 {
                    records.push(LrrtRecord {
                        step: step - 1,
                        lr,
                        raw_loss: raw_sum / taken as f64,
                        smoothed_loss: smoothed,
                    });
                }
                break 'sweep;
            };
            let loss = model.train_step(&batch, lr);
            step += 1;
            taken += 1;
            raw_sum += loss;
            if !loss.is_finite() {
                exploded = true;
                smoothed = f64::INFINITY;
                break;
            }
            avg = cfg.smoothing * avg + (1.0 - cfg.smoothing) * loss;
            smoothed = avg / (1.0 - cfg.smoothing.powi(step as i32));
            best = best.min(smoothed);
            if smoothed > cfg.explosion_factor * best {
                exploded = true;
                break;
            }
        }
        records.push(LrrtRecord {
            step: step - 1,
            lr,
            raw_loss: raw_sum / taken as f64,
            smoothed_loss: smoothed,
        });
        if exploded {
            explosion_lr = Some(lr);
            break;
        }
    }

    let mut report = LrrtReport {
        records,
        step_rate: cfg.step_rate,
        suggested_max_lr: cfg.end_lr,
        phase_boundaries: None,
        explosion_lr,
    };
    report.phase_boundaries = phase_boundaries(&report);
    report.suggested_max_lr = match analyze_lrrt(&report) {
        Ok(lr) => lr,
        // guard value: the sweep's end, or the last rate before the explosion
        Err(_) => match explosion_lr {
            None => cfg.end_lr,
            Some(_) => {
                let n = report.records.len();
                report.records[n.saturating_sub(2)].lr
            }
        },
    };
    Ok(report)
}

fn usable(report: &LrrtReport) -> &[LrrtRecord] {
    let mut n = report
        .records
        .iter()
        .position(|r| !r.smoothed_loss.is_finite())
        .unwrap_or(report.records.len());
    if report.explosion_lr.is_some() {
        n = n.min(report.records.len().saturating_sub(1));
    }
    &report.records[..n]
}

fn phase_boundaries(report: &LrrtReport) -> Option<(usize, usize)> {
    let recs = usable(report);
    if recs.len() < 3 {
        return None;
    }
    let first = recs[0].smoothed_loss;
    let (descent_end, min) = recs
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.smoothed_loss.total_cmp(&b.1.smoothed_loss))
        .map(|(i, r)| (i, r.smoothed_loss))?;
    if !(min < first) {
        return None;
    }
    let threshold = first - 0.05 * (first - min);
    let plateau_end = recs.iter().position(|r| r.smoothed_loss < threshold)?;
    Some((plateau_end.saturating_sub(1), descent_end))
}

/// Learning rate at the steepest descent of smoothed loss against `ln(lr)`, taken strictly
/// below the explosion rate.
pub fn analyze_lrrt(report: &LrrtReport) -> Result<f64, ScheduleError> {
    const MIN_RECORDS: usize = 10;
    if report.records.len() < MIN_RECORDS {
        return Err(ScheduleError::TooFewRecords {
            needed: MIN_RECORDS,
            got: report.records.len(),
        });
    }
    let recs = usable(report);
    if recs.len() < 3 {
        return Err(ScheduleError::NoUsableRange);
    }
    let scale = recs
        .iter()
        .map(|r| r.smoothed_loss.abs())
        .fold(0.0, f64::max)
        .max(f64::MIN_POSITIVE);
    let mut steepest: Option<(usize, f64)> = None;
    for i in 1..recs.len() - 1 {
        let du = recs[i + 1].lr.ln() - recs[i - 1].lr.ln();
        let slope = (recs[i + 1].smoothed_loss - recs[i - 1].smoothed_loss) / du;
        if slope < -1e-9 * scale && steepest.is_none_or(|(_, s)| slope < s) {
            steepest = Some((i, slope));
        }
    }
    let (idx, _) = steepest.ok_or(ScheduleError::NoUsableRange)?;
    let mut lr = recs[idx].lr;
    if let Some(limit) = report.explosion_lr {
        if lr >= limit {
            lr = recs
                .iter()
                .rev()
                .map(|r| r.lr)
                .find(|&l| l < limit)
                .ok_or(ScheduleError::NoUsableRange)?;
        }
    }
    Ok(lr)
}
