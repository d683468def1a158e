//! Quadratic test family with closed-form solutions.
//!
//! `f^k(x, y) = ½‖y‖² + ½‖x − a_k‖²` and
//! `g^k(x, y) = ½ yᵀBy − xᵀCy + d_kᵀy`, with `B` shared by all agents and
//! `a_k`, `d_k` heterogeneous. Then `y*(x) = B⁻¹(Cᵀx − d̄)` and
//! `∇F(x) = (x − ā) + C B⁻¹ y*(x)`.

use super::{
    bounded_noise, enforce_spectral_bound, symmetric_uniform, BilevelProblem, Optimum, ProblemConstants,
    StochasticSample,
};
use crate::error::ProblemError;
use crate::linalg::{Matrix, Vector};
use crate::rng::{stream, Purpose};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuadraticNoise {
    /// std of the outer-gradient noise
    #[serde(default)]
    pub sigma_f: f64,
    /// std of the inner-gradient and cross-Hessian noise; the `∇²yy` noise is
    /// additionally capped so every draw stays admissible
    #[serde(default)]
    pub sigma_g: f64,
}

impl QuadraticNoise {
    pub fn zero() -> Self {
        Self { sigma_f: 0.0, sigma_g: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuadraticParams {
    pub d_x: usize,
    pub d_y: usize,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_mu")]
    pub mu_g: f64,
    #[serde(default = "default_l")]
    pub l_g: f64,
    /// defaults to `mu_g / (2 l_g)`
    #[serde(default)]
    pub kappa_g: Option<f64>,
    #[serde(default = "default_noise")]
    pub noise: QuadraticNoise,
    /// scale of the per-agent offsets of `a_k` and `d_k` around their means
    #[serde(default = "default_het")]
    pub heterogeneity: f64,
}

fn default_seed() -> u64 {
    0
}
fn default_mu() -> f64 {
    0.5
}
fn default_l() -> f64 {
    1.0
}
fn default_noise() -> QuadraticNoise {
    QuadraticNoise { sigma_f: 0.1, sigma_g: 0.1 }
}
fn default_het() -> f64 {
    1.0
}

impl Default for QuadraticParams {
    fn default() -> Self {
        Self {
            d_x: 4,
            d_y: 4,
            seed: default_seed(),
            mu_g: default_mu(),
            l_g: default_l(),
            kappa_g: None,
            noise: default_noise(),
            heterogeneity: default_het(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Quadratic {
    consts: ProblemConstants,
    b: Matrix,
    b_inv: Matrix,
    c: Matrix,
    a: Vec<Vector>,
    d: Vec<Vector>,
    a_bar: Vector,
    d_bar: Vector,
    a_spread: f64,
    noise: QuadraticNoise,
    hess_amp: f64,
}

impl Quadratic {
    /// Random instance determined by `(k, params)`.
    pub fn new(k: usize, p: &QuadraticParams) -> Result<Self, ProblemError> {
        if k == 0 {
            return Err(ProblemError::InvalidParameter("need at least one agent".into()));
        }
        if p.d_x == 0 || p.d_y == 0 {
            return Err(ProblemError::InvalidParameter("dimensions must be at least 1".into()));
        }
        if p.mu_g > p.l_g {
            return Err(ProblemError::InvalidConstants(format!(
                "requested mu_g = {} exceeds l_g = {}",
                p.mu_g, p.l_g
            )));
        }
        if !(p.mu_g > 0.0) {
            return Err(ProblemError::InvalidConstants("mu_g must be positive".into()));
        }
        let mut rng = stream(p.seed, Purpose::Instance, 0, 0, 0);
        let gauss = |r: usize, c: usize, rng: &mut ChaCha8Rng| {
            Matrix::from_fn(r, c, |_, _| StandardNormal.sample(rng))
        };

        let q = gauss(p.d_y, p.d_y, &mut rng).qr().q();
        let eigs = Vector::from_fn(p.d_y, |i, _| {
            if p.d_y == 1 {
                p.mu_g
            } else {
                p.mu_g + (p.l_g - p.mu_g) * i as f64 / (p.d_y - 1) as f64
            }
        });
        let mut b = &q * Matrix::from_diagonal(&eigs) * q.transpose();
        b = (&b + b.transpose()) * 0.5;
        let c = gauss(p.d_x, p.d_y, &mut rng) / (p.d_y as f64).sqrt();
        let a_bar = gauss(p.d_x, 1, &mut rng).column(0).into_owned();
        let d_bar = gauss(p.d_y, 1, &mut rng).column(0).into_owned();

        let offsets = |n: usize, rng: &mut ChaCha8Rng| -> Vec<Vector> {
            let raw: Vec<Vector> = (0..k)
                .map(|_| Vector::from_fn(n, |_, _| StandardNormal.sample(rng)))
                .collect();
            let mean = raw.iter().fold(Vector::zeros(n), |acc, v| acc + v) / k as f64;
            raw.into_iter().map(|v| (v - &mean) * p.heterogeneity).collect()
        };
        let a: Vec<Vector> = offsets(p.d_x, &mut rng).into_iter().map(|o| &a_bar + o).collect();
        let d: Vec<Vector> = offsets(p.d_y, &mut rng).into_iter().map(|o| &d_bar + o).collect();

        let kappa = p.kappa_g.unwrap_or(p.mu_g / (2.0 * p.l_g));
        Self::from_parts(b, c, a, d, p.noise, p.mu_g, p.l_g, kappa)
    }

    /// Instance from explicit matrices. `b` must be symmetric positive
    /// definite with spectrum inside `[mu_g, l_g]`.
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        b: Matrix,
        c: Matrix,
        a: Vec<Vector>,
        d: Vec<Vector>,
        noise: QuadraticNoise,
        mu_g: f64,
        l_g: f64,
        kappa_g: f64,
    ) -> Result<Self, ProblemError> {
        let (d_x, d_y) = c.shape();
        if b.shape() != (d_y, d_y) {
            return Err(ProblemError::DimensionMismatch { expected: d_y, found: b.nrows() });
        }
        if a.is_empty() || a.len() != d.len() {
            return Err(ProblemError::InvalidParameter("need one a_k and one d_k per agent".into()));
        }
        for v in &a {
            if v.len() != d_x {
                return Err(ProblemError::DimensionMismatch { expected: d_x, found: v.len() });
            }
        }
        for v in &d {
            if v.len() != d_y {
                return Err(ProblemError::DimensionMismatch { expected: d_y, found: v.len() });
            }
        }
        let consts = ProblemConstants {
            d_x,
            d_y,
            mu_g,
            l_g,
            kappa_g,
            c_f: 1.0,
            l_f: 1.0,
            sigma_f: noise.sigma_f,
            sigma_g: noise.sigma_g,
        };
        consts.validate()?;
        let b_inv = b
            .clone()
            .cholesky()
            .ok_or_else(|| ProblemError::InvalidConstants("B is not positive definite".into()))?
            .inverse();
        let k = a.len();
        let a_bar = a.iter().fold(Vector::zeros(d_x), |acc, v| acc + v) / k as f64;
        let d_bar = d.iter().fold(Vector::zeros(d_y), |acc, v| acc + v) / k as f64;
        let a_spread = a.iter().map(|v| (v - &a_bar).norm_squared()).sum::<f64>() / k as f64;
        // every draw B + E must keep its spectrum inside [kappa L, (2 - kappa) L]
        let eig = nalgebra::SymmetricEigen::new(b.clone()).eigenvalues;
        let (lo, hi) = eig.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
        let margin = (lo - kappa_g * l_g).min((2.0 - kappa_g) * l_g - hi).max(0.0);
        // ‖E‖₂ <= ‖E‖_F <= amp · d_y
        let hess_amp = (3f64.sqrt() * noise.sigma_g).min(margin / d_y as f64);
        Ok(Self { consts, b, b_inv, c, a, d, a_bar, d_bar, a_spread, noise, hess_amp })
    }

    pub fn b(&self) -> &Matrix {
        &self.b
    }
    pub fn c(&self) -> &Matrix {
        &self.c
    }
    pub fn a_bar(&self) -> &Vector {
        &self.a_bar
    }
    pub fn d_bar(&self) -> &Vector {
        &self.d_bar
    }

    fn hess_draw(&self, rng: &mut ChaCha8Rng) -> Matrix {
        if self.hess_amp == 0.0 {
            return self.b.clone();
        }
        let e = symmetric_uniform(self.consts.d_y, self.hess_amp, rng);
        enforce_spectral_bound(&self.b + e, &self.consts)
    }
}

impl BilevelProblem for Quadratic {
    fn name(&self) -> &'static str {
        "quadratic"
    }

    fn constants(&self) -> &ProblemConstants {
        &self.consts
    }

    fn agents(&self) -> usize {
        self.a.len()
    }

    fn sample(&self, agent: usize, x: &Vector, y: &Vector, b: usize, rng: &mut ChaCha8Rng) -> StochasticSample {
        let (dx, dy) = (self.consts.d_x, self.consts.d_y);
        let gx_f = x - &self.a[agent] + bounded_noise(dx, self.noise.sigma_f, rng);
        let gy_f = y + bounded_noise(dy, self.noise.sigma_f, rng);
        let gy_g = self.grad_y_g_local(agent, x, y) + bounded_noise(dy, self.noise.sigma_g, rng);
        let mut hxy_g = -&self.c;
        if self.noise.sigma_g > 0.0 {
            let amp = 3f64.sqrt() * self.noise.sigma_g;
            use rand::Rng;
            hxy_g.iter_mut().for_each(|v| *v += amp * (2.0 * rng.random::<f64>() - 1.0));
        }
        let hyy_g_draws = (0..b).map(|_| self.hess_draw(rng)).collect();
        StochasticSample { gx_f, gy_f, gy_g, hxy_g, hyy_g_draws }
    }

    fn sample_grad_y_g(&self, agent: usize, x: &Vector, y: &Vector, rng: &mut ChaCha8Rng) -> Vector {
        self.grad_y_g_local(agent, x, y) + bounded_noise(self.consts.d_y, self.noise.sigma_g, rng)
    }

    fn sample_grad_x_f(&self, agent: usize, x: &Vector, _y: &Vector, rng: &mut ChaCha8Rng) -> Vector {
        x - &self.a[agent] + bounded_noise(self.consts.d_x, self.noise.sigma_f, rng)
    }

    fn exact_lower(&self, x: &Vector) -> Vector {
        &self.b_inv * (self.c.transpose() * x - &self.d_bar)
    }

    fn exact_grad_x_f(&self, x: &Vector, _y: &Vector) -> Vector {
        x - &self.a_bar
    }

    fn exact_grad_y_f(&self, _x: &Vector, y: &Vector) -> Vector {
        y.clone()
    }

    fn exact_grad_y_g(&self, x: &Vector, y: &Vector) -> Vector {
        &self.b * y - self.c.transpose() * x + &self.d_bar
    }

    fn exact_hess_xy_g(&self, _x: &Vector, _y: &Vector) -> Matrix {
        -&self.c
    }

    fn exact_hess_yy_g(&self, _x: &Vector, _y: &Vector) -> Matrix {
        self.b.clone()
    }

    fn objective(&self, x: &Vector) -> f64 {
        let y = self.exact_lower(x);
        0.5 * y.norm_squared() + 0.5 * (x - &self.a_bar).norm_squared() + 0.5 * self.a_spread
    }

    fn optimum(&self) -> Option<Optimum> {
        let dx = self.consts.d_x;
        let b_inv2 = &self.b_inv * &self.b_inv;
        let h = Matrix::identity(dx, dx) + &self.c * &b_inv2 * self.c.transpose();
        let rhs = &self.a_bar + &self.c * &b_inv2 * &self.d_bar;
        let x = h.cholesky()?.solve(&rhs);
        Some(Optimum { value: self.objective(&x), x: x.iter().copied().collect(), numerical: false })
    }
}

impl Quadratic {
    fn grad_y_g_local(&self, agent: usize, x: &Vector, y: &Vector) -> Vector {
        &self.b * y - self.c.transpose() * x + &self.d[agent]
    }
}
