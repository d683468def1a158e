//! Bilevel problem families and their sampling oracles.
//!
//! Every family exposes a per-agent stochastic oracle (unbiased draws of the
//! five first/second-order quantities) and exact, full-information evaluators
//! of the averaged problem. The exact evaluators feed the metrics and tests
//! only; the algorithms never call them.

mod hyperopt;
mod libsvm;
mod policy_eval;
mod quadratic;

pub use hyperopt::{AgentData, Dataset, HyperOpt, HyperOptParams};
pub use libsvm::{densify, parse_libsvm, parse_libsvm_with, shard_sizes, split_partition, SparseRecord};
pub use policy_eval::{PolicyEval, PolicyEvalNoise, PolicyEvalParams};
pub use quadratic::{Quadratic, QuadraticNoise, QuadraticParams};

use crate::error::ProblemError;
use crate::linalg::{spd_solve, Matrix, Vector};
use rand_chacha::ChaCha8Rng;

/// One oracle draw for one agent at one point.
#[derive(Debug, Clone, PartialEq)]
pub struct StochasticSample {
    /// draw of ∇x f^k
    pub gx_f: Vector,
    /// draw of ∇y f^k
    pub gy_f: Vector,
    /// draw of ∇y g^k
    pub gy_g: Vector,
    /// draw of ∇²xy g^k, `d_x × d_y`
    pub hxy_g: Matrix,
    /// `b` independent draws of ∇²yy g^k
    pub hyy_g_draws: Vec<Matrix>,
}

/// Constants of the regularity assumptions, plus the Lipschitz constants
/// derived from them.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ProblemConstants {
    pub d_x: usize,
    pub d_y: usize,
    /// strong-convexity modulus of the inner problem
    pub mu_g: f64,
    /// inner smoothness bound `L_g`
    pub l_g: f64,
    /// `0 < kappa_g <= mu_g / l_g`
    pub kappa_g: f64,
    pub c_f: f64,
    pub l_f: f64,
    pub sigma_f: f64,
    pub sigma_g: f64,
}

impl ProblemConstants {
    /// `L_q = 1 / (kappa_g L_g)`, the bound on the inverse-Hessian estimate.
    pub fn l_q(&self) -> f64 {
        1.0 / (self.kappa_g * self.l_g)
    }

    /// Lipschitz constant of `y*(x)`: `L_g / mu_g`.
    pub fn l_y(&self) -> f64 {
        self.l_g / self.mu_g
    }

    /// Lipschitz bound on `∇F` (the standard bilevel smoothness constant).
    pub fn l_f_total(&self) -> f64 {
        let ly = self.l_y();
        self.l_f + (self.l_f + self.l_g * self.c_f / self.mu_g) * ly
            + self.l_g * self.l_f / self.mu_g
            + self.c_f * self.l_g / self.mu_g.powi(2) * (1.0 + ly)
    }

    /// Individual named checks; empty when everything holds.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.d_x == 0 || self.d_y == 0 {
            out.push("dimensions must be at least 1".to_string());
        }
        for (name, v) in [
            ("mu_g", self.mu_g),
            ("l_g", self.l_g),
            ("kappa_g", self.kappa_g),
            ("c_f", self.c_f),
            ("l_f", self.l_f),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                out.push(format!("{name} must be positive and finite, got {v}"));
            }
        }
        if self.mu_g > self.l_g {
            out.push(format!("mu_g = {} exceeds l_g = {}", self.mu_g, self.l_g));
        }
        if self.kappa_g > self.mu_g / self.l_g + 1e-15 {
            out.push(format!(
                "kappa_g = {} exceeds mu_g / l_g = {}",
                self.kappa_g,
                self.mu_g / self.l_g
            ));
        }
        if self.sigma_f < 0.0 || self.sigma_g < 0.0 {
            out.push("noise levels must be nonnegative".to_string());
        }
        out
    }

    pub fn validate(&self) -> Result<(), ProblemError> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(ProblemError::InvalidConstants(v.join("; ")))
        }
    }
}

/// Reference solution of the averaged problem.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Optimum {
    pub x: Vec<f64>,
    pub value: f64,
    /// `true` when obtained by a numerical solver rather than in closed form.
    pub numerical: bool,
}

/// A decentralized bilevel problem: `K` agents, each holding `f^k` and `g^k`.
pub trait BilevelProblem: Send + Sync {
    fn name(&self) -> &'static str;

    fn constants(&self) -> &ProblemConstants;

    /// Number of agents the instance was built for.
    fn agents(&self) -> usize;

    /// Full oracle draw for `agent` at `(x, y)` with `b` Hessian draws.
    fn sample(&self, agent: usize, x: &Vector, y: &Vector, b: usize, rng: &mut ChaCha8Rng) -> StochasticSample;

    /// Single draw of `∇y g^k(x, y; ξ)` (used by the double-loop baselines).
    fn sample_grad_y_g(&self, agent: usize, x: &Vector, y: &Vector, rng: &mut ChaCha8Rng) -> Vector;

    /// Single draw of `∇x f^k(x, y; ζ)`.
    fn sample_grad_x_f(&self, agent: usize, x: &Vector, y: &Vector, rng: &mut ChaCha8Rng) -> Vector;

    /// `y*(x)`, the minimizer of the averaged inner objective.
    fn exact_lower(&self, x: &Vector) -> Vector;

    fn exact_grad_x_f(&self, x: &Vector, y: &Vector) -> Vector;
    fn exact_grad_y_f(&self, x: &Vector, y: &Vector) -> Vector;
    fn exact_grad_y_g(&self, x: &Vector, y: &Vector) -> Vector;
    fn exact_hess_xy_g(&self, x: &Vector, y: &Vector) -> Matrix;
    fn exact_hess_yy_g(&self, x: &Vector, y: &Vector) -> Matrix;

    /// `F(x) = f(x, y*(x))`.
    fn objective(&self, x: &Vector) -> f64;

    /// `∇F(x) = ∇x f − ∇²xy g [∇²yy g]⁻¹ ∇y f` at `(x, y*(x))`.
    fn exact_hypergrad(&self, x: &Vector) -> Vector {
        let y = self.exact_lower(x);
        implicit_hypergrad(
            &self.exact_grad_x_f(x, &y),
            &self.exact_grad_y_f(x, &y),
            &self.exact_hess_xy_g(x, &y),
            &self.exact_hess_yy_g(x, &y),
        )
    }

    /// `(x*, F*)` when available.
    fn optimum(&self) -> Option<Optimum>;

    fn as_compositional(&self) -> Option<&dyn CompositionalProblem> {
        None
    }
}

/// Problems whose inner function has the form `g(x, y) = ½‖y − h(x)‖²`.
///
/// The naive-chain-rule baseline only makes sense for these: it samples the
/// inner value `h^k(x; ξ)` and its Jacobian directly.
pub trait CompositionalProblem: BilevelProblem {
    /// Draw of the inner value `h^k(x; ξ)`, length `d_y`.
    fn sample_inner_value(&self, agent: usize, x: &Vector, rng: &mut ChaCha8Rng) -> Vector;

    /// Draw of the transposed Jacobian `∇h^k(x; ξ)`, `d_x × d_y`.
    fn sample_inner_jacobian(&self, agent: usize, x: &Vector, rng: &mut ChaCha8Rng) -> Matrix;

    /// Draw of `(∇x f^k(x, y; ζ), ∇y f^k(x, y; ζ))`.
    fn sample_outer_grads(&self, agent: usize, x: &Vector, y: &Vector, rng: &mut ChaCha8Rng) -> (Vector, Vector);
}

/// Hypergradient assembled from its four ingredients.
pub fn implicit_hypergrad(gx_f: &Vector, gy_f: &Vector, hxy_g: &Matrix, hyy_g: &Matrix) -> Vector {
    let w = spd_solve(hyy_g, gy_f)
        .or_else(|| hyy_g.clone().lu().solve(gy_f))
        .expect("inner Hessian must be invertible");
    gx_f - hxy_g * w
}

/// Uniform symmetric perturbation with entries in `[-amp, amp]`.
pub(crate) fn symmetric_uniform(n: usize, amp: f64, rng: &mut ChaCha8Rng) -> Matrix {
    use rand::Rng;
    let mut m = Matrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let v = amp * (2.0 * rng.random::<f64>() - 1.0);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    m
}

/// Vector of bounded zero-mean noise with standard deviation `sigma` per
/// coordinate (uniform on `[-√3σ, √3σ]`).
pub(crate) fn bounded_noise(n: usize, sigma: f64, rng: &mut ChaCha8Rng) -> Vector {
    use rand::Rng;
    if sigma == 0.0 {
        return Vector::zeros(n);
    }
    let half = 3f64.sqrt() * sigma;
    Vector::from_fn(n, |_, _| half * (2.0 * rng.random::<f64>() - 1.0))
}

/// Project a Hessian draw back into the admissible set
/// `‖I − H/L_g‖₂ <= 1 − kappa_g`, i.e. spectrum in
/// `[kappa_g L_g, (2 − kappa_g) L_g]`. Draws already inside are returned
/// untouched.
pub(crate) fn enforce_spectral_bound(h: Matrix, consts: &ProblemConstants) -> Matrix {
    let lo = consts.kappa_g * consts.l_g;
    let hi = (2.0 - consts.kappa_g) * consts.l_g;
    // Gershgorin disc check avoids an eigendecomposition in the common case
    let n = h.nrows();
    let inside = (0..n).all(|i| {
        let radius: f64 = (0..n).filter(|&j| j != i).map(|j| h[(i, j)].abs()).sum();
        h[(i, i)] - radius >= lo && h[(i, i)] + radius <= hi
    });
    if inside {
        return h;
    }
    let eig = nalgebra::SymmetricEigen::new(h.clone());
    if eig.eigenvalues.iter().all(|&v| v >= lo && v <= hi) {
        return h;
    }
    crate::linalg::clip_spectrum(&h, lo, hi)
}
