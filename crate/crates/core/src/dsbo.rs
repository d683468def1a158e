//! Gossip-based decentralized stochastic bilevel optimization.
//!
//! Each agent keeps its iterates `(x, y)` and weighted-average estimators of
//! `∇x f`, `∇y f`, `∇²xy g` and `b` copies of `∇²yy g`. A round gossips every
//! quantity with the neighbors, takes one descent step on `x` and `y`, folds
//! a fresh oracle draw into each estimator, and rebuilds the inverse-Hessian
//! estimate from a truncated Neumann series.

use crate::error::AlgorithmError;
use crate::linalg::{all_finite_mat, all_finite_vec, Matrix, Vector};
use crate::problems::BilevelProblem;
use crate::rng::{stream, Purpose};
use crate::schedule::StepSchedule;
use crate::topology::MixingMatrix;
use rayon::prelude::*;

#[derive(Debug, Clone, PartialEq)]
pub struct AgentState {
    pub x: Vector,
    pub y: Vector,
    /// estimate of `∇x f`
    pub s: Vector,
    /// estimate of `∇y f`
    pub h: Vector,
    /// estimate of `∇²xy g`, `d_x × d_y`
    pub u: Matrix,
    /// `b` estimates of `∇²yy g`
    pub v: Vec<Matrix>,
    /// inverse-Hessian estimate
    pub q: Matrix,
}

impl AgentState {
    /// Descent direction `z = s − u (q h)`.
    pub fn direction(&self) -> Vector {
        &self.s - &self.u * (&self.q * &self.h)
    }

    /// Name of the first non-finite iterate, if any.
    pub fn first_non_finite(&self) -> Option<&'static str> {
        if !all_finite_vec(&self.x) {
            Some("x")
        } else if !all_finite_vec(&self.y) {
            Some("y")
        } else if !all_finite_vec(&self.s) {
            Some("s")
        } else if !all_finite_vec(&self.h) {
            Some("h")
        } else if !all_finite_mat(&self.u) {
            Some("u")
        } else if !self.v.iter().all(all_finite_mat) {
            Some("v")
        } else if !all_finite_mat(&self.q) {
            Some("q")
        } else {
            None
        }
    }

    /// Zero iterates with `v_i = μ_g I` and the matching `q`.
    pub fn initial(problem: &dyn BilevelProblem, b: usize) -> Result<Self, AlgorithmError> {
        if b == 0 {
            return Err(AlgorithmError::Dimension("b must be at least 1".into()));
        }
        let c = problem.constants();
        let (dx, dy) = (c.d_x, c.d_y);
        let v = vec![Matrix::identity(dy, dy) * c.mu_g; b];
        let q = neumann_chain(&v, c.l_g)?;
        Ok(Self {
            x: Vector::zeros(dx),
            y: Vector::zeros(dy),
            s: Vector::zeros(dx),
            h: Vector::zeros(dy),
            u: Matrix::zeros(dx, dy),
            v,
            q,
        })
    }
}

/// `K` identical initial states.
pub fn init_agents(problem: &dyn BilevelProblem, k: usize, b: usize) -> Result<Vec<AgentState>, AlgorithmError> {
    let one = AgentState::initial(problem, b)?;
    Ok(vec![one; k])
}

/// Truncated Neumann series for `[∇²yy g]⁻¹`:
/// `Q₀ = I`, `Q_i = I + (I − v_i/L_g) Q_{i−1}`, returning `Q_b / L_g`.
pub fn neumann_chain(v: &[Matrix], l_g: f64) -> Result<Matrix, AlgorithmError> {
    let Some(first) = v.first() else {
        return Err(AlgorithmError::Dimension("neumann_chain needs at least one matrix".into()));
    };
    let n = first.nrows();
    for (i, m) in v.iter().enumerate() {
        if m.shape() != (n, n) {
            return Err(AlgorithmError::Dimension(format!(
                "v[{i}] has shape {:?}, expected ({n}, {n})",
                m.shape()
            )));
        }
    }
    let eye = Matrix::identity(n, n);
    let step = |m: &Matrix| &eye - m / l_g;
    // Q₁ = I + (I − v₁/L)·I needs no product
    let mut q = &eye + step(first);
    for m in &v[1..] {
        q = &eye + step(m) * &q;
    }
    Ok(q / l_g)
}

/// Truncation depth `3⌈log_{1/(1−κ)} T⌉`, or 1 when `κ = 1`.
pub fn default_b(t_total: usize, kappa_g: f64) -> usize {
    if kappa_g >= 1.0 {
        return 1;
    }
    let ratio = (t_total.max(2) as f64).ln() / (1.0 / (1.0 - kappa_g)).ln();
    let rounded = ratio.round();
    let terms = if (ratio - rounded).abs() < 1e-9 { rounded } else { ratio.ceil() };
    3 * (terms as usize).max(1)
}

/// `(1 − β)·mixed + β·fresh`.
pub(crate) fn blend_vec(mixed: Vector, fresh: &Vector, beta: f64) -> Vector {
    mixed * (1.0 - beta) + fresh * beta
}

pub(crate) fn blend_mat(mixed: Matrix, fresh: &Matrix, beta: f64) -> Matrix {
    mixed * (1.0 - beta) + fresh * beta
}

/// Per-round inputs shared by every agent.
#[derive(Clone, Copy)]
pub struct RoundContext<'a> {
    pub problem: &'a dyn BilevelProblem,
    pub mixing: &'a MixingMatrix,
    pub schedule: &'a StepSchedule,
    pub seed: u64,
}

/// One synchronous round. Every right-hand side reads the time-`t`
/// snapshot, so agents update independently (and in parallel).
pub fn dsbo_round(states: &[AgentState], ctx: RoundContext<'_>, t: usize) -> Result<Vec<AgentState>, AlgorithmError> {
    ctx.schedule.check(t)?;
    let k = ctx.mixing.k();
    if states.len() != k {
        return Err(AlgorithmError::Dimension(format!("{} states for {k} agents", states.len())));
    }
    let (alpha, beta, gamma) = (ctx.schedule.alpha(t), ctx.schedule.beta(t), ctx.schedule.gamma(t));
    let l_g = ctx.problem.constants().l_g;
    let b = states[0].v.len();

    let next: Vec<Result<AgentState, AlgorithmError>> = (0..k)
        .into_par_iter()
        .map(|agent| {
            let me = &states[agent];
            let mut rng = stream(ctx.seed, Purpose::Oracle, agent, t, 0);
            let draw = ctx.problem.sample(agent, &me.x, &me.y, b, &mut rng);
            let w = ctx.mixing;

            let z = me.direction();
            let x = w.mix_with(agent, |j| &states[j].x) - z * alpha;
            let y = w.mix_with(agent, |j| &states[j].y) - &draw.gy_g * gamma;
            let s = blend_vec(w.mix_with(agent, |j| &states[j].s), &draw.gx_f, beta);
            let h = blend_vec(w.mix_with(agent, |j| &states[j].h), &draw.gy_f, beta);
            let u = blend_mat(w.mix_with(agent, |j| &states[j].u), &draw.hxy_g, beta);
            let v: Vec<Matrix> = (0..b)
                .map(|i| blend_mat(w.mix_with(agent, |j| &states[j].v[i]), &draw.hyy_g_draws[i], beta))
                .collect();
            let q = neumann_chain(&v, l_g)?;
            Ok(AgentState { x, y, s, h, u, v, q })
        })
        .collect();

    let next = next.into_iter().collect::<Result<Vec<_>, _>>()?;
    check_finite(&next, t)?;
    Ok(next)
}

pub(crate) fn check_finite(states: &[AgentState], t: usize) -> Result<(), AlgorithmError> {
    for (agent, st) in states.iter().enumerate() {
        if let Some(iterate) = st.first_non_finite() {
            return Err(AlgorithmError::Divergence { t, agent, iterate });
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::{Quadratic, QuadraticNoise, QuadraticParams};
    use crate::schedule::{make_schedule, ScheduleConfig};
    use crate::topology::{build_complete, build_ring};
    use approx::assert_relative_eq;

    fn scalar_quadratic() -> Quadratic {
        let one = Matrix::from_element(1, 1, 1.0);
        Quadratic::from_parts(
            one.clone(),
            one,
            vec![Vector::zeros(1)],
            vec![Vector::zeros(1)],
            QuadraticNoise::zero(),
            1.0,
            1.0,
            0.5,
        )
        .unwrap()
    }

    #[test]
    fn neumann_exact_for_l_g_multiple_of_identity() {
        let v = vec![Matrix::identity(3, 3) * 2.0; 4];
        assert_eq!(neumann_chain(&v, 2.0).unwrap(), Matrix::identity(3, 3) * 0.5);
    }

    #[test]
    fn neumann_geometric_series() {
        // (1/μ)(1 − (1 − μ/L)^{b+1}) with μ = 0.5, L = 1, b = 10
        let v = vec![Matrix::identity(2, 2) * 0.5; 10];
        let q = neumann_chain(&v, 1.0).unwrap();
        let expected = 2.0 * (1.0 - 0.5f64.powi(11));
        assert_relative_eq!(expected, 1.999_023_4, epsilon = 1e-7);
        assert_relative_eq!(q, Matrix::identity(2, 2) * expected, epsilon = 1e-14);
        // direct sum of the series
        let direct: f64 = (0..=10).map(|i| 0.5f64.powi(i)).sum();
        assert_relative_eq!(q[(0, 0)], direct, epsilon = 1e-14);
    }

    #[test]
    fn neumann_dimension_errors() {
        assert!(neumann_chain(&[], 1.0).is_err());
        assert!(neumann_chain(&[Matrix::identity(2, 2), Matrix::identity(3, 3)], 1.0).is_err());
    }

    #[test]
    fn neumann_symmetric_for_single_draw() {
        let a = Matrix::from_row_slice(3, 3, &[0.8, 0.1, 0.0, 0.1, 0.6, 0.2, 0.0, 0.2, 0.9]);
        let q = neumann_chain(std::slice::from_ref(&a), 1.0).unwrap();
        assert!(crate::linalg::max_asymmetry(&q) < 1e-14);
        let q = neumann_chain(&vec![a; 7], 1.0).unwrap();
        assert!(crate::linalg::max_asymmetry(&q) < 1e-10);
    }

    #[test]
    fn default_b_values() {
        assert_eq!(default_b(100, 0.5), 21);
        assert_eq!(default_b(100, 1.0), 1);
        assert_eq!(default_b(20_000, 0.9), 15);
        assert_eq!(default_b(1024, 0.5), 30);
    }

    #[test]
    fn initial_state() {
        let q = Quadratic::new(2, &QuadraticParams { d_x: 3, d_y: 2, mu_g: 1.0, l_g: 1.0, ..Default::default() })
            .unwrap();
        let st = init_agents(&q, 2, 4).unwrap();
        assert_eq!(st.len(), 2);
        assert_eq!(st[0].x, Vector::zeros(3));
        assert!(st[0].v.iter().all(|v| *v == Matrix::identity(2, 2)));
        // μ_g = L_g collapses the recursion to I/L_g
        assert_eq!(st[0].q, Matrix::identity(2, 2));

        let q = Quadratic::new(1, &QuadraticParams { d_x: 1, d_y: 1, mu_g: 0.5, l_g: 1.0, ..Default::default() })
            .unwrap();
        let st = AgentState::initial(&q, 3).unwrap();
        assert_relative_eq!(st.q[(0, 0)], 2.0 * (1.0 - 0.5f64.powi(4)), epsilon = 1e-15);
        assert!(AgentState::initial(&q, 0).is_err());
    }

    #[test]
    fn zero_gradient_start_is_fixed() {
        let p = scalar_quadratic();
        let w = build_complete(1).unwrap();
        let sched = make_schedule(&ScheduleConfig::Diminishing { c1: 10.0, mu: 1.0 }, 1, 10).unwrap();
        let ctx = RoundContext { problem: &p, mixing: &w, schedule: &sched, seed: 0 };
        let st = init_agents(&p, 1, 2).unwrap();
        let next = dsbo_round(&st, ctx, 0).unwrap();
        assert_eq!(next[0].x[0], 0.0);
        assert_eq!(next[0].y[0], 0.0);
    }

    #[test]
    fn full_weight_estimator_equals_fresh_draw() {
        let p = Quadratic::new(3, &QuadraticParams { seed: 4, ..Default::default() }).unwrap();
        let w = build_ring(3).unwrap();
        // diminishing schedule has β₀ = 1
        let sched = make_schedule(&ScheduleConfig::Diminishing { c1: 10.0, mu: 1.0 }, 3, 10).unwrap();
        let ctx = RoundContext { problem: &p, mixing: &w, schedule: &sched, seed: 9 };
        let mut st = init_agents(&p, 3, 2).unwrap();
        st[1].x[0] = 0.7;
        st[2].y[1] = -0.4;
        let next = dsbo_round(&st, ctx, 0).unwrap();
        for agent in 0..3 {
            let mut rng = stream(9, Purpose::Oracle, agent, 0, 0);
            let draw = p.sample(agent, &st[agent].x, &st[agent].y, 2, &mut rng);
            assert_eq!(next[agent].s, draw.gx_f);
            assert_eq!(next[agent].h, draw.gy_f);
        }
    }

    #[test]
    fn identical_agents_stay_identical_on_complete_graph() {
        let p = Quadratic::new(
            4,
            &QuadraticParams { heterogeneity: 0.0, noise: QuadraticNoise::zero(), seed: 2, ..Default::default() },
        )
        .unwrap();
        let w = build_complete(4).unwrap();
        let sched = make_schedule(&ScheduleConfig::Diminishing { c1: 10.0, mu: 1.0 }, 4, 10).unwrap();
        let ctx = RoundContext { problem: &p, mixing: &w, schedule: &sched, seed: 1 };
        let mut st = init_agents(&p, 4, 3).unwrap();
        for t in 0..20 {
            st = dsbo_round(&st, ctx, t).unwrap();
            for a in 1..4 {
                assert!((&st[a].x - &st[0].x).amax() < 1e-12);
            }
        }
    }

    #[test]
    fn divergence_is_reported_with_agent_and_iterate() {
        let p = scalar_quadratic();
        let w = build_complete(1).unwrap();
        let sched = make_schedule(&ScheduleConfig::Diminishing { c1: 10.0, mu: 1.0 }, 1, 10).unwrap();
        let ctx = RoundContext { problem: &p, mixing: &w, schedule: &sched, seed: 0 };
        let mut st = init_agents(&p, 1, 1).unwrap();
        st[0].h[0] = f64::NAN;
        let err = dsbo_round(&st, ctx, 3).unwrap_err();
        assert!(matches!(err, AlgorithmError::Divergence { t: 3, agent: 0, .. }), "{err:?}");
    }

    #[test]
    fn exhausted_constant_schedule() {
        let p = scalar_quadratic();
        let w = build_complete(1).unwrap();
        let sched = make_schedule(&ScheduleConfig::Constant { c0: 0.1, c_beta: 1.0 }, 1, 5).unwrap();
        let ctx = RoundContext { problem: &p, mixing: &w, schedule: &sched, seed: 0 };
        let st = init_agents(&p, 1, 1).unwrap();
        assert!(matches!(dsbo_round(&st, ctx, 5), Err(AlgorithmError::ScheduleExhausted { .. })));
    }
}
