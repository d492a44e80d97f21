use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Learning-rate schedule.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LrSchedule {
    Constant {
        eta: f64,
    },
    /// Warmup-stable-decay: linear warmup from 0, constant plateau, then a
    /// `1 - sqrt` decay over the final `decay_fraction` of the run.
    Wsd {
        eta_peak: f64,
        warmup_steps: u64,
        decay_fraction: f64,
    },
}

impl LrSchedule {
    pub fn validate(&self, total: u64) -> Result<()> {
        match *self {
            LrSchedule::Constant { eta } => {
                if !(eta > 0.0) || !eta.is_finite() {
                    return Err(Error::config("schedule.eta", "must be positive"));
                }
            }
            LrSchedule::Wsd {
                eta_peak,
                warmup_steps,
                decay_fraction,
            } => {
                if !(eta_peak > 0.0) || !eta_peak.is_finite() {
                    return Err(Error::config("schedule.eta_peak", "must be positive"));
                }
                if !(0.0..=1.0).contains(&decay_fraction) {
                    return Err(Error::config(
                        "schedule.decay_fraction",
                        "must lie in [0, 1]",
                    ));
                }
                if warmup_steps as f64 > decay_start(total, decay_fraction) {
                    return Err(Error::config(
                        "schedule.warmup_steps",
                        "warmup overlaps the decay phase",
                    ));
                }
            }
        }
        Ok(())
    }
}

fn decay_start(total: u64, decay_fraction: f64) -> f64 {
    total as f64 * (1.0 - decay_fraction)
}

/// Learning rate for step `t` of a run with `total` steps.
pub fn eta_at(t: u64, schedule: &LrSchedule, total: u64) -> Result<f64> {
    if t >= total {
        return Err(Error::invalid(format!("step {t} outside run of {total} steps")));
    }
    schedule.validate(total)?;
    Ok(match *schedule {
        LrSchedule::Constant { eta } => eta,
        LrSchedule::Wsd {
            eta_peak,
            warmup_steps,
            decay_fraction,
        } => {
            let t_f = t as f64;
            let ts = decay_start(total, decay_fraction);
            if t < warmup_steps {
                eta_peak * t_f / warmup_steps as f64
            } else if t_f < ts {
                eta_peak
            } else {
                eta_peak * (1.0 - ((t_f - ts) / (total as f64 - ts)).sqrt())
            }
        }
    })
}
