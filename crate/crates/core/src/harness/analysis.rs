//! Statistics over traces: the averaged gradient norm, tail log-log slopes,
//! and samples-to-accuracy tables across network sizes.

use super::trace::TraceRecord;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AnalysisError {
    #[error("empty trace")]
    Empty,
    #[error("the averaged gradient norm needs every round recorded, trace cadence is {0}")]
    Cadence(usize),
    #[error("field `{0}` is missing from the trace")]
    MissingField(String),
    #[error("field `{field}` is not positive at t = {t} ({value})")]
    NonPositive { field: String, t: usize, value: f64 },
    #[error("fewer than two points in the slope window")]
    Window,
}

/// Mean of `grad_norm_sq` over the recorded rounds.
pub fn mean_grad_norm(records: &[TraceRecord], cadence: usize) -> Result<f64, AnalysisError> {
    if cadence != 1 {
        return Err(AnalysisError::Cadence(cadence));
    }
    if records.is_empty() {
        return Err(AnalysisError::Empty);
    }
    Ok(records.iter().map(|r| r.grad_norm_sq).sum::<f64>() / records.len() as f64)
}

/// Default tail fraction for [`loglog_slope`]: the last decade of `t`.
pub const DEFAULT_SLOPE_WINDOW: f64 = 0.9;

/// Least-squares slope of `log(field)` against `log(t)` over records with
/// `t >= (1 − window) · t_max` and `t >= 1`.
pub fn loglog_slope(records: &[TraceRecord], field: &str, window: f64) -> Result<f64, AnalysisError> {
    let t_max = records.iter().map(|r| r.t).max().ok_or(AnalysisError::Empty)?;
    let start = ((1.0 - window.clamp(0.0, 1.0)) * t_max as f64).max(1.0);
    let mut pts = Vec::new();
    for r in records.iter().filter(|r| r.t as f64 >= start) {
        let v = r.get(field).ok_or_else(|| AnalysisError::MissingField(field.to_string()))?;
        if !(v > 0.0) {
            return Err(AnalysisError::NonPositive { field: field.to_string(), t: r.t, value: v });
        }
        pts.push(((r.t as f64).ln(), v.ln()));
    }
    least_squares_slope(&pts).ok_or(AnalysisError::Window)
}

fn least_squares_slope(pts: &[(f64, f64)]) -> Option<f64> {
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

/// Empirical quantile with linear interpolation between order statistics
/// (the "type 7" rule). `sorted` must be ascending.
pub fn quantile(sorted: &[f64], p: f64) -> Option<f64> {
    if sorted.is_empty() {
        return None;
    }
    let h = (sorted.len() - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    Some(sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo]))
}

pub fn median(values: &[f64]) -> Option<f64> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    quantile(&v, 0.5)
}

/// Point at which a run first reaches the target accuracy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hit {
    pub t: usize,
    pub per_agent_xi: u64,
    pub total_xi: u64,
}

/// First record with `mse <= eps`; `None` when the run never gets there.
pub fn samples_to_eps(records: &[TraceRecord], eps: f64, k: usize) -> Option<Hit> {
    records.iter().find(|r| r.mse.is_some_and(|m| m <= eps)).map(|r| Hit {
        t: r.t,
        per_agent_xi: r.samples_xi,
        total_xi: r.samples_xi * k as u64,
    })
}

/// Median and 12.5%/87.5% quantiles (a central 75% band).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Band {
    pub median: f64,
    pub lo: f64,
    pub hi: f64,
}

impl Band {
    pub fn of(values: &[f64]) -> Option<Self> {
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        Some(Band { median: quantile(&v, 0.5)?, lo: quantile(&v, 0.125)?, hi: quantile(&v, 0.875)? })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeedupRow {
    pub k: usize,
    pub runs: usize,
    /// runs that never reached `eps`; excluded from the bands
    pub censored: usize,
    pub total: Option<Band>,
    pub per_agent: Option<Band>,
}

/// Samples-to-ε per network size. `groups` pairs each `K` with the records
/// of its seeds.
pub fn speedup_analysis(groups: &[(usize, Vec<Vec<TraceRecord>>)], eps: f64) -> Vec<SpeedupRow> {
    groups
        .iter()
        .map(|(k, runs)| {
            let hits: Vec<Hit> = runs.iter().filter_map(|r| samples_to_eps(r, eps, *k)).collect();
            let total: Vec<f64> = hits.iter().map(|h| h.total_xi as f64).collect();
            let per: Vec<f64> = hits.iter().map(|h| h.per_agent_xi as f64).collect();
            SpeedupRow {
                k: *k,
                runs: runs.len(),
                censored: runs.len() - hits.len(),
                total: Band::of(&total),
                per_agent: Band::of(&per),
            }
        })
        .collect()
}
