//! Federated hyperparameter optimization of an L2-regularized logistic model.
//!
//! Agent `k` holds a training and a validation partition. The inner problem
//! fits weights `y` on the training data under a per-coordinate ridge whose
//! strengths are the hyperparameters `x`; the outer problem is the validation
//! loss at the fitted weights:
//!
//! ```text
//! g^k(x, y) = mean_j ℓ_j(y) + Σ_i (softplus(x_i) + λ_min)/2 · y_i²   (training)
//! f^k(x, y) = mean_i ℓ_i(y)                                           (validation)
//! ```
//!
//! with `ℓ(y; w, z) = log(1 + e^{wᵀy}) − z wᵀy`. The softplus keeps the ridge
//! strength positive for every `x`, so the inner problem is
//! `λ_min`-strongly convex everywhere.

use super::{enforce_spectral_bound, BilevelProblem, Optimum, ProblemConstants, StochasticSample};
use crate::error::ProblemError;
use crate::linalg::{sigmoid, softplus, spd_solve, Matrix, Vector};
use crate::rng::{stream, Purpose};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

/// Labelled points `(w_i, z_i)` with `z_i ∈ {0, 1}`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    pub points: Vec<Vector>,
    pub labels: Vec<f64>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> Option<usize> {
        self.points.first().map(|p| p.len())
    }

    pub fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            points: idx.iter().map(|&i| self.points[i].clone()).collect(),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    /// Logistic-regression data with a planted weight vector: standard
    /// normal features and a true logit of standard deviation 3.
    pub fn synthetic(n: usize, dim: usize, seed: u64) -> Dataset {
        let mut rng = stream(seed, Purpose::Instance, 1, 0, 0);
        let truth = Vector::from_fn(dim, |_, _| StandardNormal.sample(&mut rng)) * (3.0 / (dim as f64).sqrt());
        let mut data = Dataset::default();
        for _ in 0..n {
            let w = Vector::from_fn(dim, |_, _| StandardNormal.sample(&mut rng));
            let p = sigmoid(truth.dot(&w));
            let z = if rng.random::<f64>() < p { 1.0 } else { 0.0 };
            data.points.push(w);
            data.labels.push(z);
        }
        data
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct AgentData {
    pub train: Dataset,
    pub val: Dataset,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HyperOptParams {
    /// LIBSVM file; synthetic data is generated when absent
    #[serde(default)]
    pub data: Option<String>,
    /// label mapped to class 0 in addition to every label `<= 0`
    #[serde(default)]
    pub negative_label: Option<f64>,
    #[serde(default = "default_n")]
    pub n_points: usize,
    #[serde(default = "default_dim")]
    pub dim: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_ratio")]
    pub train_ratio: f64,
    /// `λ_min`
    #[serde(default = "default_floor")]
    pub reg_floor: f64,
    /// hyperparameter magnitude for which the Hessian bound `L_g` is sized;
    /// draws outside are projected back
    #[serde(default = "default_cap")]
    pub x_cap: f64,
    #[serde(default = "default_batch")]
    pub batch: usize,
}

fn default_n() -> usize {
    690
}
fn default_dim() -> usize {
    14
}
fn default_ratio() -> f64 {
    0.5
}
fn default_floor() -> f64 {
    1e-3
}
fn default_cap() -> f64 {
    5.0
}
fn default_batch() -> usize {
    1
}

impl Default for HyperOptParams {
    fn default() -> Self {
        Self {
            data: None,
            negative_label: None,
            n_points: default_n(),
            dim: default_dim(),
            seed: 0,
            train_ratio: default_ratio(),
            reg_floor: default_floor(),
            x_cap: default_cap(),
            batch: default_batch(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct HyperOpt {
    consts: ProblemConstants,
    agents: Vec<AgentData>,
    reg_floor: f64,
    batch: usize,
}

#[inline]
fn logistic_loss(t: f64, z: f64) -> f64 {
    softplus(t) - z * t
}

impl HyperOpt {
    pub fn from_params(k: usize, p: &HyperOptParams) -> Result<Self, ProblemError> {
        let data = match &p.data {
            Some(path) => {
                let file = std::fs::File::open(path).map_err(|e| ProblemError::Io(format!("{path}: {e}")))?;
                let records = super::parse_libsvm_with(std::io::BufReader::new(file), p.negative_label)?;
                super::densify(&records)
            }
            None => Dataset::synthetic(p.n_points, p.dim, p.seed),
        };
        let parts = super::split_partition(&data, k, p.seed, p.train_ratio)?;
        Self::new(parts, p.reg_floor, p.x_cap, p.batch)
    }

    pub fn new(agents: Vec<AgentData>, reg_floor: f64, x_cap: f64, batch: usize) -> Result<Self, ProblemError> {
        if agents.is_empty() {
            return Err(ProblemError::InvalidParameter("need at least one agent".into()));
        }
        if !(reg_floor > 0.0) {
            return Err(ProblemError::InvalidParameter(format!("reg_floor must be positive, got {reg_floor}")));
        }
        if batch == 0 {
            return Err(ProblemError::InvalidParameter("batch must be >= 1".into()));
        }
        let mut dim = None;
        let mut max_sq = 0.0f64;
        for (agent, a) in agents.iter().enumerate() {
            if a.train.is_empty() {
                return Err(ProblemError::EmptyPartition { agent, part: "training" });
            }
            if a.val.is_empty() {
                return Err(ProblemError::EmptyPartition { agent, part: "validation" });
            }
            for p in a.train.points.iter().chain(&a.val.points) {
                let d = *dim.get_or_insert(p.len());
                if p.len() != d {
                    return Err(ProblemError::DimensionMismatch { expected: d, found: p.len() });
                }
                max_sq = max_sq.max(p.norm_squared());
            }
        }
        let d = dim.unwrap();
        let l_g = 0.25 * max_sq + softplus(x_cap) + reg_floor;
        let consts = ProblemConstants {
            d_x: d,
            d_y: d,
            mu_g: reg_floor,
            l_g,
            kappa_g: reg_floor / l_g,
            c_f: max_sq.sqrt(),
            l_f: 0.25 * max_sq,
            sigma_f: max_sq.sqrt(),
            sigma_g: max_sq.sqrt(),
        };
        Ok(Self { consts, agents, reg_floor, batch })
    }

    pub fn agent_data(&self) -> &[AgentData] {
        &self.agents
    }

    fn ridge(&self, x: &Vector) -> Vector {
        x.map(|v| softplus(v) + self.reg_floor)
    }

    fn grad_loss(data: &Dataset, idx: impl Iterator<Item = usize>, y: &Vector) -> (Vector, usize) {
        let mut g = Vector::zeros(y.len());
        let mut n = 0;
        for i in idx {
            let w = &data.points[i];
            g.axpy(sigmoid(w.dot(y)) - data.labels[i], w, 1.0);
            n += 1;
        }
        (g, n)
    }

    fn hess_loss(data: &Dataset, idx: impl Iterator<Item = usize>, y: &Vector) -> (Matrix, usize) {
        let d = y.len();
        let mut h = Matrix::zeros(d, d);
        let mut n = 0;
        for i in idx {
            let w = &data.points[i];
            let s = sigmoid(w.dot(y));
            h.ger(s * (1.0 - s), w, w, 1.0);
            n += 1;
        }
        (h, n)
    }

    fn batch_idx(&self, len: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
        (0..self.batch).map(|_| rng.random_range(0..len)).collect()
    }

    /// Averaged training objective `g(x, y)`.
    pub fn inner_value(&self, x: &Vector, y: &Vector) -> f64 {
        let k = self.agents.len() as f64;
        let loss: f64 = self
            .agents
            .iter()
            .map(|a| {
                let n = a.train.len() as f64;
                a.train.points.iter().zip(&a.train.labels).map(|(w, &z)| logistic_loss(w.dot(y), z)).sum::<f64>() / n
            })
            .sum::<f64>()
            / k;
        loss + 0.5 * self.ridge(x).iter().zip(y.iter()).map(|(c, v)| c * v * v).sum::<f64>()
    }

    fn mean_over_agents<F: Fn(&AgentData) -> Vector>(&self, f: F) -> Vector {
        let k = self.agents.len() as f64;
        let d = self.consts.d_y;
        self.agents.iter().fold(Vector::zeros(d), |acc, a| acc + f(a)) / k
    }
}

impl BilevelProblem for HyperOpt {
    fn name(&self) -> &'static str {
        "hyperopt"
    }

    fn constants(&self) -> &ProblemConstants {
        &self.consts
    }

    fn agents(&self) -> usize {
        self.agents.len()
    }

    fn sample(&self, agent: usize, x: &Vector, y: &Vector, b: usize, rng: &mut ChaCha8Rng) -> StochasticSample {
        let a = &self.agents[agent];
        let ridge = self.ridge(x);
        let d = self.consts.d_y;

        let vi = self.batch_idx(a.val.len(), rng);
        let (gy_f, n) = Self::grad_loss(&a.val, vi.into_iter(), y);
        let gy_f = gy_f / n as f64;

        let ti = self.batch_idx(a.train.len(), rng);
        let (gy_g, n) = Self::grad_loss(&a.train, ti.into_iter(), y);
        let gy_g = gy_g / n as f64 + ridge.component_mul(y);

        let hxy_g = self.exact_hess_xy_g(x, y);
        let hyy_g_draws = (0..b)
            .map(|_| {
                let idx = self.batch_idx(a.train.len(), rng);
                let (h, n) = Self::hess_loss(&a.train, idx.into_iter(), y);
                let h = h / n as f64 + Matrix::from_diagonal(&ridge);
                enforce_spectral_bound(h, &self.consts)
            })
            .collect();
        StochasticSample { gx_f: Vector::zeros(d), gy_f, gy_g, hxy_g, hyy_g_draws }
    }

    fn sample_grad_y_g(&self, agent: usize, x: &Vector, y: &Vector, rng: &mut ChaCha8Rng) -> Vector {
        let a = &self.agents[agent];
        let ti = self.batch_idx(a.train.len(), rng);
        let (g, n) = Self::grad_loss(&a.train, ti.into_iter(), y);
        g / n as f64 + self.ridge(x).component_mul(y)
    }

    fn sample_grad_x_f(&self, _agent: usize, x: &Vector, _y: &Vector, _rng: &mut ChaCha8Rng) -> Vector {
        Vector::zeros(x.len())
    }

    /// Damped Newton on the averaged training objective, started from zero.
    fn exact_lower(&self, x: &Vector) -> Vector {
        let d = self.consts.d_y;
        let mut y = Vector::zeros(d);
        for _ in 0..200 {
            let g = self.exact_grad_y_g(x, &y);
            let gn = g.norm();
            if gn <= 1e-14 {
                break;
            }
            let h = self.exact_hess_yy_g(x, &y);
            let step = spd_solve(&h, &g).unwrap_or_else(|| g.clone());
            let f0 = self.inner_value(x, &y);
            let slope = g.dot(&step);
            let mut t = 1.0;
            loop {
                let cand = &y - &step * t;
                if self.inner_value(x, &cand) <= f0 - 1e-4 * t * slope || t < 1e-10 {
                    y = cand;
                    break;
                }
                t *= 0.5;
            }
            if (&step * t).norm() <= 1e-16 * (1.0 + y.norm()) {
                break;
            }
        }
        y
    }

    fn exact_grad_x_f(&self, x: &Vector, _y: &Vector) -> Vector {
        Vector::zeros(x.len())
    }

    fn exact_grad_y_f(&self, _x: &Vector, y: &Vector) -> Vector {
        self.mean_over_agents(|a| {
            let (g, n) = Self::grad_loss(&a.val, 0..a.val.len(), y);
            g / n as f64
        })
    }

    fn exact_grad_y_g(&self, x: &Vector, y: &Vector) -> Vector {
        self.mean_over_agents(|a| {
            let (g, n) = Self::grad_loss(&a.train, 0..a.train.len(), y);
            g / n as f64
        }) + self.ridge(x).component_mul(y)
    }

    fn exact_hess_xy_g(&self, x: &Vector, y: &Vector) -> Matrix {
        Matrix::from_diagonal(&x.zip_map(y, |xi, yi| sigmoid(xi) * yi))
    }

    fn exact_hess_yy_g(&self, x: &Vector, y: &Vector) -> Matrix {
        let k = self.agents.len() as f64;
        let d = self.consts.d_y;
        let h = self.agents.iter().fold(Matrix::zeros(d, d), |acc, a| {
            let (h, n) = Self::hess_loss(&a.train, 0..a.train.len(), y);
            acc + h / n as f64
        }) / k;
        h + Matrix::from_diagonal(&self.ridge(x))
    }

    fn objective(&self, x: &Vector) -> f64 {
        let y = self.exact_lower(x);
        let k = self.agents.len() as f64;
        self.agents
            .iter()
            .map(|a| {
                let n = a.val.len() as f64;
                a.val.points.iter().zip(&a.val.labels).map(|(w, &z)| logistic_loss(w.dot(&y), z)).sum::<f64>() / n
            })
            .sum::<f64>()
            / k
    }

    fn optimum(&self) -> Option<Optimum> {
        None
    }
}
