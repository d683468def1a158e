//! Run configuration, its JSON form, and dotted-path overrides.

use crate::baselines::{DbsaOptions, DsgdOptions};
use crate::error::ProblemError;
use crate::linalg::Matrix;
use crate::problems::{
    BilevelProblem, HyperOpt, HyperOptParams, PolicyEval, PolicyEvalParams, Quadratic, QuadraticParams,
};
use crate::schedule::ScheduleConfig;
use crate::topology::{build_complete, build_custom, build_ring, MixingMatrix};
use serde::{Deserialize, Serialize};
use serde_json::Value;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    Dsbo,
    Fedsbo,
    Dbsa,
    Dsgd,
}

impl Algorithm {
    pub fn name(&self) -> &'static str {
        match self {
            Algorithm::Dsbo => "dsbo",
            Algorithm::Fedsbo => "fedsbo",
            Algorithm::Dbsa => "dbsa",
            Algorithm::Dsgd => "dsgd",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum ProblemConfig {
    Quadratic(QuadraticParams),
    PolicyEval(PolicyEvalParams),
    Hyperopt(HyperOptParams),
}

impl ProblemConfig {
    /// The `family` tag as written in the config.
    pub fn family(&self) -> &'static str {
        match self {
            ProblemConfig::Quadratic(_) => "quadratic",
            ProblemConfig::PolicyEval(_) => "policy-eval",
            ProblemConfig::Hyperopt(_) => "hyperopt",
        }
    }

    pub fn build(&self, k: usize) -> Result<Box<dyn BilevelProblem>, ProblemError> {
        Ok(match self {
            ProblemConfig::Quadratic(p) => Box::new(Quadratic::new(k, p)?),
            ProblemConfig::PolicyEval(p) => Box::new(PolicyEval::new(k, p)?),
            ProblemConfig::Hyperopt(p) => Box::new(HyperOpt::from_params(k, p)?),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TopologyKind {
    Ring,
    Complete,
    Custom,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologyConfig {
    pub kind: TopologyKind,
    pub k: usize,
    /// row-major weights for `custom`
    #[serde(default)]
    pub weights: Option<Vec<Vec<f64>>>,
    /// accept a disconnected custom graph (with a warning)
    #[serde(default)]
    pub allow_disconnected: bool,
}

impl TopologyConfig {
    pub fn ring(k: usize) -> Self {
        Self { kind: TopologyKind::Ring, k, weights: None, allow_disconnected: false }
    }

    pub fn complete(k: usize) -> Self {
        Self { kind: TopologyKind::Complete, k, weights: None, allow_disconnected: false }
    }

    pub fn build(&self) -> Result<MixingMatrix, crate::error::TopologyError> {
        use crate::error::TopologyError;
        match self.kind {
            TopologyKind::Ring => build_ring(self.k),
            TopologyKind::Complete => build_complete(self.k),
            TopologyKind::Custom => {
                let rows = self
                    .weights
                    .as_ref()
                    .ok_or_else(|| TopologyError::InvalidTopology("custom topology needs `weights`".into()))?;
                if rows.len() != self.k {
                    return Err(TopologyError::AgentCount { expected: self.k, found: rows.len() });
                }
                if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != self.k) {
                    return Err(TopologyError::NotSquare { rows: i, cols: r.len() });
                }
                let flat: Vec<f64> = rows.iter().flatten().copied().collect();
                build_custom(Matrix::from_row_slice(self.k, self.k, &flat), !self.allow_disconnected)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub algorithm: Algorithm,
    pub problem: ProblemConfig,
    pub topology: TopologyConfig,
    /// number of rounds `T`
    pub t_total: usize,
    pub schedule: ScheduleConfig,
    /// Neumann truncation depth; defaults from `T` and `kappa_g`
    #[serde(default)]
    pub b: Option<usize>,
    #[serde(default)]
    pub seed: u64,
    /// record every `cadence` rounds; defaults to 1 up to 10⁴ rounds
    #[serde(default)]
    pub cadence: Option<usize>,
    /// force cadence 1 so the averaged gradient-norm statistic is available
    #[serde(default)]
    pub mean_grad_norm: bool,
    #[serde(default)]
    pub output: Option<String>,
    #[serde(default)]
    pub dbsa: DbsaOptions,
    #[serde(default)]
    pub dsgd: DsgdOptions,
}

/// Rounds beyond which the default cadence thins out.
pub const DENSE_TRACE_ROUNDS: usize = 10_000;

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn effective_cadence(&self) -> usize {
        if self.mean_grad_norm {
            return 1;
        }
        match self.cadence {
            Some(c) => c.max(1),
            None if self.t_total <= DENSE_TRACE_ROUNDS => 1,
            None => self.t_total.div_ceil(DENSE_TRACE_ROUNDS),
        }
    }

    /// Apply `path=value` overrides. Paths are dotted keys into the JSON
    /// form and must already exist; values are parsed as JSON and fall back
    /// to plain strings.
    pub fn with_overrides<S: AsRef<str>>(&self, overrides: &[S]) -> Result<Self, String> {
        let mut doc = serde_json::to_value(self).map_err(|e| e.to_string())?;
        for o in overrides {
            let o = o.as_ref();
            let (path, raw) = o.split_once('=').ok_or_else(|| format!("override `{o}` is not of the form key=value"))?;
            let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
            set_path(&mut doc, path.trim(), value)?;
        }
        serde_json::from_value(doc).map_err(|e| format!("override does not fit the schema: {e}"))
    }
}

fn set_path(doc: &mut Value, path: &str, value: Value) -> Result<(), String> {
    let mut cur = doc;
    let parts: Vec<&str> = path.split('.').collect();
    for (i, key) in parts.iter().enumerate() {
        let here = parts[..=i].join(".");
        cur = match cur {
            Value::Object(map) => map.get_mut(*key).ok_or_else(|| format!("unknown config key `{here}`"))?,
            Value::Array(items) => {
                let idx: usize = key.parse().map_err(|_| format!("`{here}` indexes an array with `{key}`"))?;
                items.get_mut(idx).ok_or_else(|| format!("index out of range at `{here}`"))?
            }
            _ => return Err(format!("`{}` is not a table", parts[..i].join("."))),
        };
    }
    *cur = value;
    Ok(())
}
