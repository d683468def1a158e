//! Multi-agent policy evaluation with linear value approximation.
//!
//! States carry features `φ_s ∈ [0,1]^m`, transitions follow a shared
//! row-stochastic `P`, and agent `k` observes rewards
//! `r^k(s,s') ~ N(r̄^k_{s,s'}, σ²)`. With the Bellman target
//! `δ^k_s(x) = E_{s'}[r^k(s,s') + γ φ_{s'}ᵀx]` the problem is cast as
//!
//! ```text
//! g^k(x, y) = ½ Σ_s (y_s − δ^k_s(x))²
//! f^k(x, y) = 1/(2|S|) Σ_s (φ_sᵀx − y_s)² + λ/2 ‖x‖²
//! ```
//!
//! so `y*(x) = δ̄(x)`, `∇²yy g = I` and `F` is the λ-regularized Bellman
//! residual, which is λ-strongly convex.

use super::{BilevelProblem, CompositionalProblem, Optimum, ProblemConstants, StochasticSample};
use crate::error::ProblemError;
use crate::linalg::{Matrix, Vector};
use crate::rng::{stream, Purpose};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyEvalNoise {
    /// std of the Gaussian reward noise
    #[serde(default = "one")]
    pub reward_std: f64,
    /// simulate one random transition per state per draw; when `false` the
    /// draws use the exact transition expectation
    #[serde(default = "yes")]
    pub sample_transitions: bool,
}

fn one() -> f64 {
    1.0
}
fn yes() -> bool {
    true
}

impl PolicyEvalNoise {
    pub fn zero() -> Self {
        Self { reward_std: 0.0, sample_transitions: false }
    }
}

impl Default for PolicyEvalNoise {
    fn default() -> Self {
        Self { reward_std: 1.0, sample_transitions: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyEvalParams {
    pub n_states: usize,
    #[serde(default = "default_feat")]
    pub feat_dim: usize,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    #[serde(default = "one")]
    pub lambda: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub noise: PolicyEvalNoise,
    /// when `false` every agent shares agent 0's reward means
    #[serde(default = "yes")]
    pub heterogeneous: bool,
    /// multiplier on the `Unif[0,1]` reward means
    #[serde(default = "one")]
    pub reward_scale: f64,
}

fn default_feat() -> usize {
    5
}
fn default_gamma() -> f64 {
    0.9
}

impl Default for PolicyEvalParams {
    fn default() -> Self {
        Self {
            n_states: 100,
            feat_dim: default_feat(),
            gamma: default_gamma(),
            lambda: 1.0,
            seed: 0,
            noise: PolicyEvalNoise::default(),
            heterogeneous: true,
            reward_scale: 1.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PolicyEval {
    consts: ProblemConstants,
    gamma: f64,
    lambda: f64,
    noise: PolicyEvalNoise,
    /// `|S| × m`, row `s` is `φ_sᵀ`
    phi: Matrix,
    /// cumulative transition rows for inverse-CDF sampling
    cum_p: Vec<Vec<f64>>,
    /// `Ψ = PΦ`, row `s` is `E_{s'}[φ_{s'}]ᵀ`
    psi: Matrix,
    /// per agent, `|S| × |S|` reward means
    r_bar: Vec<Matrix>,
    /// per agent, `R^k_s = Σ_{s'} p_{s,s'} r̄^k_{s,s'}`
    r_exp: Vec<Vector>,
    r_exp_mean: Vector,
}

impl PolicyEval {
    pub fn new(k: usize, p: &PolicyEvalParams) -> Result<Self, ProblemError> {
        if k == 0 {
            return Err(ProblemError::InvalidParameter("need at least one agent".into()));
        }
        if p.n_states < 2 {
            return Err(ProblemError::InvalidParameter(format!("n_states must be >= 2, got {}", p.n_states)));
        }
        if p.feat_dim == 0 {
            return Err(ProblemError::InvalidParameter("feat_dim must be >= 1".into()));
        }
        let s = p.n_states;
        let mut rng = stream(p.seed, Purpose::Instance, 0, 0, 0);
        let phi = Matrix::from_fn(s, p.feat_dim, |_, _| rng.random::<f64>());
        let mut trans = Matrix::from_fn(s, s, |_, _| rng.random::<f64>());
        for i in 0..s {
            let sum: f64 = trans.row(i).sum();
            trans.row_mut(i).iter_mut().for_each(|v| *v /= sum);
        }
        let mut r_bar: Vec<Matrix> = (0..k)
            .map(|_| Matrix::from_fn(s, s, |_, _| p.reward_scale * rng.random::<f64>()))
            .collect();
        if !p.heterogeneous {
            let first = r_bar[0].clone();
            r_bar.iter_mut().for_each(|r| *r = first.clone());
        }
        Self::from_parts(phi, trans, r_bar, p.gamma, p.lambda, p.noise)
    }

    /// Instance from explicit features, transitions and reward means.
    pub fn from_parts(
        phi: Matrix,
        trans: Matrix,
        r_bar: Vec<Matrix>,
        gamma: f64,
        lambda: f64,
        noise: PolicyEvalNoise,
    ) -> Result<Self, ProblemError> {
        if !(0.0..1.0).contains(&gamma) {
            return Err(ProblemError::InvalidParameter(format!("gamma must lie in [0, 1), got {gamma}")));
        }
        if !(lambda > 0.0) {
            return Err(ProblemError::InvalidParameter(format!("lambda must be positive, got {lambda}")));
        }
        let (s, m) = phi.shape();
        if trans.shape() != (s, s) {
            return Err(ProblemError::DimensionMismatch { expected: s, found: trans.nrows() });
        }
        for i in 0..s {
            let sum: f64 = trans.row(i).sum();
            if (sum - 1.0).abs() > 1e-9 || trans.row(i).iter().any(|&v| v < 0.0) {
                return Err(ProblemError::InvalidParameter(format!("transition row {i} is not a distribution")));
            }
        }
        if r_bar.is_empty() {
            return Err(ProblemError::InvalidParameter("need at least one agent".into()));
        }
        for r in &r_bar {
            if r.shape() != (s, s) {
                return Err(ProblemError::DimensionMismatch { expected: s, found: r.nrows() });
            }
        }
        let cum_p = (0..s)
            .map(|i| {
                let mut acc = 0.0;
                let mut row: Vec<f64> = trans.row(i).iter().map(|&v| {
                    acc += v;
                    acc
                })
                .collect();
                *row.last_mut().unwrap() = 1.0;
                row
            })
            .collect();
        let psi = &trans * &phi;
        let r_exp: Vec<Vector> = r_bar
            .iter()
            .map(|r| Vector::from_fn(s, |i, _| trans.row(i).dot(&r.row(i))))
            .collect();
        let k = r_bar.len();
        let r_exp_mean = r_exp.iter().fold(Vector::zeros(s), |a, v| a + v) / k as f64;
        let phi_norm_sq = crate::linalg::frobenius_sq(&phi);
        let consts = ProblemConstants {
            d_x: m,
            d_y: s,
            mu_g: 1.0,
            l_g: 1.0,
            kappa_g: 1.0,
            c_f: 1.0 + phi_norm_sq.sqrt(),
            l_f: phi_norm_sq / s as f64 + lambda,
            sigma_f: 0.0,
            sigma_g: noise.reward_std,
        };
        Ok(Self { consts, gamma, lambda, noise, phi, cum_p, psi, r_bar, r_exp, r_exp_mean })
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn phi(&self) -> &Matrix {
        &self.phi
    }

    /// Exact per-agent Bellman target `δ^k(x)`.
    pub fn bellman_target(&self, agent: usize, x: &Vector) -> Vector {
        &self.r_exp[agent] + (&self.psi * x) * self.gamma
    }

    /// One transition simulation: `(δ̂^k(x), successor per state)`.
    fn simulate(&self, agent: usize, x: &Vector, rng: &mut ChaCha8Rng) -> (Vector, Option<Vec<usize>>) {
        let s = self.consts.d_y;
        if !self.noise.sample_transitions {
            let mut delta = self.bellman_target(agent, x);
            if self.noise.reward_std > 0.0 {
                delta.iter_mut().for_each(|v| {
                    let z: f64 = StandardNormal.sample(rng);
                    *v += self.noise.reward_std * z;
                });
            }
            return (delta, None);
        }
        let phi_x = &self.phi * x;
        let r = &self.r_bar[agent];
        let mut next = Vec::with_capacity(s);
        let delta = Vector::from_fn(s, |i, _| {
            let u: f64 = rng.random();
            let row = &self.cum_p[i];
            let j = row.partition_point(|&c| c < u).min(s - 1);
            next.push(j);
            let mut reward = r[(i, j)];
            if self.noise.reward_std > 0.0 {
                let z: f64 = StandardNormal.sample(rng);
                reward += self.noise.reward_std * z;
            }
            reward + self.gamma * phi_x[j]
        });
        (delta, Some(next))
    }

    /// `∇h` draw transposed: column `s` is `γ φ_{s'(s)}`.
    fn jacobian(&self, next: &Option<Vec<usize>>) -> Matrix {
        match next {
            Some(next) => {
                let m = self.consts.d_x;
                Matrix::from_fn(m, next.len(), |a, s| self.gamma * self.phi[(next[s], a)])
            }
            None => self.psi.transpose() * self.gamma,
        }
    }

    fn outer_grads(&self, x: &Vector, y: &Vector) -> (Vector, Vector) {
        let s = self.consts.d_y as f64;
        let resid = &self.phi * x - y;
        let gx = self.phi.transpose() * &resid / s + x * self.lambda;
        let gy = -resid / s;
        (gx, gy)
    }
}

impl BilevelProblem for PolicyEval {
    fn name(&self) -> &'static str {
        "policy-eval"
    }

    fn constants(&self) -> &ProblemConstants {
        &self.consts
    }

    fn agents(&self) -> usize {
        self.r_bar.len()
    }

    fn sample(&self, agent: usize, x: &Vector, y: &Vector, b: usize, rng: &mut ChaCha8Rng) -> StochasticSample {
        let (gx_f, gy_f) = self.outer_grads(x, y);
        let (delta, next) = self.simulate(agent, x, rng);
        let gy_g = y - delta;
        let hxy_g = -self.jacobian(&next);
        let s = self.consts.d_y;
        StochasticSample { gx_f, gy_f, gy_g, hxy_g, hyy_g_draws: vec![Matrix::identity(s, s); b] }
    }

    fn sample_grad_y_g(&self, agent: usize, x: &Vector, y: &Vector, rng: &mut ChaCha8Rng) -> Vector {
        y - self.simulate(agent, x, rng).0
    }

    fn sample_grad_x_f(&self, _agent: usize, x: &Vector, y: &Vector, _rng: &mut ChaCha8Rng) -> Vector {
        self.outer_grads(x, y).0
    }

    fn exact_lower(&self, x: &Vector) -> Vector {
        &self.r_exp_mean + (&self.psi * x) * self.gamma
    }

    fn exact_grad_x_f(&self, x: &Vector, y: &Vector) -> Vector {
        self.outer_grads(x, y).0
    }

    fn exact_grad_y_f(&self, x: &Vector, y: &Vector) -> Vector {
        self.outer_grads(x, y).1
    }

    fn exact_grad_y_g(&self, x: &Vector, y: &Vector) -> Vector {
        y - self.exact_lower(x)
    }

    fn exact_hess_xy_g(&self, _x: &Vector, _y: &Vector) -> Matrix {
        -(self.psi.transpose() * self.gamma)
    }

    fn exact_hess_yy_g(&self, _x: &Vector, _y: &Vector) -> Matrix {
        let s = self.consts.d_y;
        Matrix::identity(s, s)
    }

    fn objective(&self, x: &Vector) -> f64 {
        let y = self.exact_lower(x);
        let s = self.consts.d_y as f64;
        (&self.phi * x - y).norm_squared() / (2.0 * s) + 0.5 * self.lambda * x.norm_squared()
    }

    fn optimum(&self) -> Option<Optimum> {
        let s = self.consts.d_y as f64;
        let m = self.consts.d_x;
        let resid_op = &self.phi - &self.psi * self.gamma;
        let a = resid_op.transpose() * &resid_op / s + Matrix::identity(m, m) * self.lambda;
        let rhs = resid_op.transpose() * &self.r_exp_mean / s;
        let x = a.cholesky()?.solve(&rhs);
        Some(Optimum { value: self.objective(&x), x: x.iter().copied().collect(), numerical: false })
    }

    fn as_compositional(&self) -> Option<&dyn CompositionalProblem> {
        Some(self)
    }
}

impl CompositionalProblem for PolicyEval {
    fn sample_inner_value(&self, agent: usize, x: &Vector, rng: &mut ChaCha8Rng) -> Vector {
        self.simulate(agent, x, rng).0
    }

    fn sample_inner_jacobian(&self, agent: usize, x: &Vector, rng: &mut ChaCha8Rng) -> Matrix {
        let (_, next) = self.simulate(agent, x, rng);
        self.jacobian(&next)
    }

    fn sample_outer_grads(&self, _agent: usize, x: &Vector, y: &Vector, _rng: &mut ChaCha8Rng) -> (Vector, Vector) {
        self.outer_grads(x, y)
    }
}
