//! Step-size and averaging-weight schedules `(α_t, β_t, γ_t)`.

use crate::error::{AlgorithmError, ScheduleError};
use serde::{Deserialize, Serialize};

/// Schedule parameters as they appear in a run configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "regime", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ScheduleConfig {
    /// `α = C₀√(K/T)`, `β = γ = C_β√(K/T)`; `C_β = 1` is the nonconvex-theory
    /// choice.
    Constant {
        c0: f64,
        #[serde(default = "one")]
        c_beta: f64,
    },
    /// `α_t = 2/(μ(C₁+t))`, `β_t = γ_t = C₁/(C₁+t)`.
    Diminishing { c1: f64, mu: f64 },
    /// `α_t = min(α_max, 2/(μt))`, `β_t = γ_t = min(β_max, c/t)`.
    Capped {
        alpha_max: f64,
        mu: f64,
        beta_max: f64,
        beta_c: f64,
    },
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq)]
pub enum StepSchedule {
    Constant { alpha: f64, beta: f64, t_total: usize },
    Diminishing { c1: f64, mu: f64 },
    Capped { alpha_max: f64, mu: f64, beta_max: f64, beta_c: f64 },
}

/// Build a schedule for `k` agents and `t_total` rounds, checking every bound
/// the regime needs.
pub fn make_schedule(cfg: &ScheduleConfig, k: usize, t_total: usize) -> Result<StepSchedule, ScheduleError> {
    let positive = |name: &str, v: f64| {
        if v > 0.0 && v.is_finite() {
            Ok(())
        } else {
            Err(ScheduleError(format!("{name} must be positive, got {v}")))
        }
    };
    match *cfg {
        ScheduleConfig::Constant { c0, c_beta } => {
            positive("c0", c0)?;
            positive("c_beta", c_beta)?;
            if t_total == 0 || k == 0 {
                return Err(ScheduleError("constant schedule needs K >= 1 and T >= 1".into()));
            }
            let root = (k as f64 / t_total as f64).sqrt();
            let beta = c_beta * root;
            if beta > 1.0 {
                return Err(ScheduleError(format!(
                    "beta = c_beta * sqrt(K/T) = {beta} exceeds 1; need T >= K * c_beta^2"
                )));
            }
            Ok(StepSchedule::Constant { alpha: c0 * root, beta, t_total })
        }
        ScheduleConfig::Diminishing { c1, mu } => {
            positive("mu", mu)?;
            let bound = 1f64.max(2.0 / mu);
            if !(c1 >= bound) {
                return Err(ScheduleError(format!(
                    "c1 = {c1} violates c1 >= max(1, 2/mu) = {bound}"
                )));
            }
            Ok(StepSchedule::Diminishing { c1, mu })
        }
        ScheduleConfig::Capped { alpha_max, mu, beta_max, beta_c } => {
            positive("alpha_max", alpha_max)?;
            positive("mu", mu)?;
            positive("beta_c", beta_c)?;
            if !(beta_max > 0.0 && beta_max <= 1.0) {
                return Err(ScheduleError(format!("beta_max = {beta_max} must lie in (0, 1]")));
            }
            Ok(StepSchedule::Capped { alpha_max, mu, beta_max, beta_c })
        }
    }
}

impl StepSchedule {
    pub fn alpha(&self, t: usize) -> f64 {
        match *self {
            StepSchedule::Constant { alpha, .. } => alpha,
            StepSchedule::Diminishing { c1, mu } => 2.0 / (mu * (c1 + t as f64)),
            StepSchedule::Capped { alpha_max, mu, .. } => {
                if t == 0 {
                    alpha_max
                } else {
                    alpha_max.min(2.0 / (mu * t as f64))
                }
            }
        }
    }

    pub fn beta(&self, t: usize) -> f64 {
        match *self {
            StepSchedule::Constant { beta, .. } => beta,
            StepSchedule::Diminishing { c1, .. } => c1 / (c1 + t as f64),
            StepSchedule::Capped { beta_max, beta_c, .. } => {
                if t == 0 {
                    beta_max
                } else {
                    beta_max.min(beta_c / t as f64)
                }
            }
        }
    }

    pub fn gamma(&self, t: usize) -> f64 {
        self.beta(t)
    }

    /// Constant schedules are tied to a horizon; using them past it is an
    /// error.
    pub fn check(&self, t: usize) -> Result<(), AlgorithmError> {
        match *self {
            StepSchedule::Constant { t_total, .. } if t >= t_total => {
                Err(AlgorithmError::ScheduleExhausted { t, t_total })
            }
            _ => Ok(()),
        }
    }
}
