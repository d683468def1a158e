//! Comparison algorithms: star-network FedSBO and the two double-loop
//! decentralized baselines, DBSA and DSGD.

use crate::dsbo::{blend_mat, blend_vec, neumann_chain, AgentState, RoundContext};
use crate::error::AlgorithmError;
use crate::linalg::{all_finite_vec, Matrix, Vector};
use crate::problems::{BilevelProblem, CompositionalProblem};
use crate::rng::{stream, Purpose};
use crate::schedule::StepSchedule;
use crate::topology::MixingMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Server-side state of FedSBO: one copy of every quantity an agent holds
/// in the decentralized algorithm.
pub type CentralState = AgentState;

/// Inputs of one FedSBO round.
#[derive(Clone, Copy)]
pub struct StarContext<'a> {
    pub problem: &'a dyn BilevelProblem,
    pub k: usize,
    pub schedule: &'a StepSchedule,
    pub seed: u64,
}

/// Plain average in agent order; the first draw seeds the sum so a single
/// agent is returned untouched.
fn average_vec<'a>(mut it: impl Iterator<Item = &'a Vector>, k: usize) -> Vector {
    let mut acc = it.next().expect("at least one agent").clone();
    for v in it {
        acc += v;
    }
    acc / k as f64
}

fn average_mat<'a>(mut it: impl Iterator<Item = &'a Matrix>, k: usize) -> Matrix {
    let mut acc = it.next().expect("at least one agent").clone();
    for m in it {
        acc += m;
    }
    acc / k as f64
}

/// One round of the star-network method. Every agent samples at the common
/// server iterate; the server averages the draws and applies the same
/// estimator and descent updates as the gossip algorithm.
pub fn fedsbo_round(central: &CentralState, ctx: StarContext<'_>, t: usize) -> Result<CentralState, AlgorithmError> {
    ctx.schedule.check(t)?;
    if ctx.k == 0 {
        return Err(AlgorithmError::Dimension("FedSBO needs at least one agent".into()));
    }
    let (alpha, beta, gamma) = (ctx.schedule.alpha(t), ctx.schedule.beta(t), ctx.schedule.gamma(t));
    let b = central.v.len();
    let draws: Vec<_> = (0..ctx.k)
        .into_par_iter()
        .map(|agent| {
            let mut rng = stream(ctx.seed, Purpose::Oracle, agent, t, 0);
            ctx.problem.sample(agent, &central.x, &central.y, b, &mut rng)
        })
        .collect();

    let k = ctx.k;
    let gx_f = average_vec(draws.iter().map(|d| &d.gx_f), k);
    let gy_f = average_vec(draws.iter().map(|d| &d.gy_f), k);
    let gy_g = average_vec(draws.iter().map(|d| &d.gy_g), k);
    let hxy = average_mat(draws.iter().map(|d| &d.hxy_g), k);

    let z = central.direction();
    let x = central.x.clone() - z * alpha;
    let y = central.y.clone() - gy_g * gamma;
    let s = blend_vec(central.s.clone(), &gx_f, beta);
    let h = blend_vec(central.h.clone(), &gy_f, beta);
    let u = blend_mat(central.u.clone(), &hxy, beta);
    let v: Vec<Matrix> = (0..b)
        .map(|i| {
            let fresh = average_mat(draws.iter().map(|d| &d.hyy_g_draws[i]), k);
            blend_mat(central.v[i].clone(), &fresh, beta)
        })
        .collect();
    let q = neumann_chain(&v, ctx.problem.constants().l_g)?;
    let next = AgentState { x, y, s, h, u, v, q };
    if let Some(iterate) = next.first_non_finite() {
        return Err(AlgorithmError::Divergence { t, agent: 0, iterate });
    }
    Ok(next)
}

/// Inner step sizes `η_{t,i}` of the double-loop baselines.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum InnerStep {
    /// `η_i = min(cap, c / (i + 1))`
    Decaying { c: f64, cap: f64 },
    Constant { eta: f64 },
}

impl InnerStep {
    pub fn eta(&self, i: usize) -> f64 {
        match *self {
            InnerStep::Decaying { c, cap } => cap.min(c / (i as f64 + 1.0)),
            InnerStep::Constant { eta } => eta,
        }
    }

    fn validate(&self) -> Result<(), AlgorithmError> {
        let ok = match *self {
            InnerStep::Decaying { c, cap } => c > 0.0 && cap > 0.0 && cap <= 1.0,
            InnerStep::Constant { eta } => eta > 0.0 && eta <= 1.0,
        };
        if ok {
            Ok(())
        } else {
            Err(AlgorithmError::Dimension(format!("inner step sizes must lie in (0, 1]: {self:?}")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DbsaOptions {
    #[serde(default = "dbsa_eta")]
    pub eta: InnerStep,
    /// add the implicit-gradient correction to the outer step
    #[serde(default)]
    pub full_hypergrad: bool,
}

fn dbsa_eta() -> InnerStep {
    InnerStep::Decaying { c: 1.0, cap: 0.5 }
}

impl Default for DbsaOptions {
    fn default() -> Self {
        Self { eta: dbsa_eta(), full_hypergrad: false }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DsgdOptions {
    /// weights of the inner running average; the default `1/(i+1)` makes
    /// `ỹ` a sample mean
    #[serde(default = "dsgd_eta")]
    pub eta: InnerStep,
}

fn dsgd_eta() -> InnerStep {
    InnerStep::Decaying { c: 1.0, cap: 1.0 }
}

impl Default for DsgdOptions {
    fn default() -> Self {
        Self { eta: dsgd_eta() }
    }
}

/// Per-agent iterate of the double-loop methods.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalIterate {
    pub x: Vector,
    pub y: Vector,
}

impl LocalIterate {
    pub fn zeros(d_x: usize, d_y: usize) -> Self {
        Self { x: Vector::zeros(d_x), y: Vector::zeros(d_y) }
    }
}

/// Per-agent sample counts `(ζ, ξ)` drawn by one outer step `t`.
pub fn dbsa_samples(t: usize, opts: &DbsaOptions, b: usize) -> (u64, u64) {
    let extra = if opts.full_hypergrad { 1 + b as u64 } else { 0 };
    (1, t as u64 + extra)
}

pub fn dsgd_samples(t: usize) -> (u64, u64) {
    (1, t as u64 + 1)
}

fn check_iterates(states: &[LocalIterate], t: usize) -> Result<(), AlgorithmError> {
    for (agent, st) in states.iter().enumerate() {
        if !all_finite_vec(&st.x) {
            return Err(AlgorithmError::Divergence { t, agent, iterate: "x" });
        }
        if !all_finite_vec(&st.y) {
            return Err(AlgorithmError::Divergence { t, agent, iterate: "y" });
        }
    }
    Ok(())
}

fn gossip_y(states: &[LocalIterate], w: &MixingMatrix, agent: usize) -> Vector {
    w.mix_with(agent, |j| &states[j].y)
}

/// One outer step of DBSA: `t` inner gossip-SGD steps on `y` warm-started
/// from the current `y`, then a gossip step on `x` along a fresh `∇x f`
/// draw (optionally corrected by the implicit term).
pub fn dbsa_step(
    states: &[LocalIterate],
    ctx: RoundContext<'_>,
    opts: &DbsaOptions,
    b: usize,
    t: usize,
) -> Result<Vec<LocalIterate>, AlgorithmError> {
    ctx.schedule.check(t)?;
    opts.eta.validate()?;
    let w = ctx.mixing;
    let k = w.k();
    let mut cur: Vec<LocalIterate> = states.to_vec();
    for i in 0..t {
        let eta = opts.eta.eta(i);
        let ys: Vec<Vector> = (0..k)
            .into_par_iter()
            .map(|agent| {
                let mut rng = stream(ctx.seed, Purpose::InnerLoop, agent, t, i);
                let g = ctx.problem.sample_grad_y_g(agent, &cur[agent].x, &cur[agent].y, &mut rng);
                gossip_y(&cur, w, agent) - g * eta
            })
            .collect();
        for (st, y) in cur.iter_mut().zip(ys) {
            st.y = y;
        }
        check_iterates(&cur, t)?;
    }
    let alpha = ctx.schedule.alpha(t);
    let l_g = ctx.problem.constants().l_g;
    let next: Vec<Result<LocalIterate, AlgorithmError>> = (0..k)
        .into_par_iter()
        .map(|agent| {
            let me = &cur[agent];
            let mut rng = stream(ctx.seed, Purpose::OuterStep, agent, t, 0);
            let grad = if opts.full_hypergrad {
                let d = ctx.problem.sample(agent, &me.x, &me.y, b, &mut rng);
                let q = neumann_chain(&d.hyy_g_draws, l_g)?;
                &d.gx_f - &d.hxy_g * (q * &d.gy_f)
            } else {
                ctx.problem.sample_grad_x_f(agent, &me.x, &me.y, &mut rng)
            };
            let x = w.mix_with(agent, |j| &cur[j].x) - grad * alpha;
            Ok(LocalIterate { x, y: me.y.clone() })
        })
        .collect();
    let next = next.into_iter().collect::<Result<Vec<_>, _>>()?;
    check_iterates(&next, t)?;
    Ok(next)
}

/// One outer step of DSGD: rebuild `ỹ` from zero by `t` weighted-average
/// gossip steps over inner-value draws, then step `x` along the naive
/// chain-rule gradient `∇x f + ∇h · ∇y f`.
pub fn dsgd_step(
    states: &[LocalIterate],
    problem: &dyn CompositionalProblem,
    mixing: &MixingMatrix,
    schedule: &StepSchedule,
    opts: &DsgdOptions,
    seed: u64,
    t: usize,
) -> Result<Vec<LocalIterate>, AlgorithmError> {
    schedule.check(t)?;
    opts.eta.validate()?;
    let k = mixing.k();
    let d_y = problem.constants().d_y;
    let mut cur: Vec<LocalIterate> =
        states.iter().map(|s| LocalIterate { x: s.x.clone(), y: Vector::zeros(d_y) }).collect();
    for i in 0..t {
        let eta = opts.eta.eta(i);
        let ys: Vec<Vector> = (0..k)
            .into_par_iter()
            .map(|agent| {
                let mut rng = stream(seed, Purpose::InnerLoop, agent, t, i);
                let h = problem.sample_inner_value(agent, &cur[agent].x, &mut rng);
                blend_vec(gossip_y(&cur, mixing, agent), &h, eta)
            })
            .collect();
        for (st, y) in cur.iter_mut().zip(ys) {
            st.y = y;
        }
        check_iterates(&cur, t)?;
    }
    let alpha = schedule.alpha(t);
    let next: Vec<LocalIterate> = (0..k)
        .into_par_iter()
        .map(|agent| {
            let me = &cur[agent];
            let mut rng = stream(seed, Purpose::OuterStep, agent, t, 0);
            let jac = problem.sample_inner_jacobian(agent, &me.x, &mut rng);
            let (gx, gy) = problem.sample_outer_grads(agent, &me.x, &me.y, &mut rng);
            let grad = gx + jac * gy;
            let x = mixing.mix_with(agent, |j| &cur[j].x) - grad * alpha;
            LocalIterate { x, y: me.y.clone() }
        })
        .collect();
    check_iterates(&next, t)?;
    Ok(next)
}

/// Final iterates and per-agent sample counts of a double-loop run.
#[derive(Debug, Clone, PartialEq)]
pub struct DoubleLoopOutcome {
    pub agents: Vec<LocalIterate>,
    pub samples_zeta: u64,
    pub samples_xi: u64,
}

/// Run DBSA for outer steps `0..t_total` from zero iterates.
pub fn dbsa_run(
    problem: &dyn BilevelProblem,
    mixing: &MixingMatrix,
    schedule: &StepSchedule,
    opts: &DbsaOptions,
    b: usize,
    t_total: usize,
    seed: u64,
) -> Result<DoubleLoopOutcome, AlgorithmError> {
    let c = problem.constants();
    let mut agents = vec![LocalIterate::zeros(c.d_x, c.d_y); mixing.k()];
    let (mut zeta, mut xi) = (0, 0);
    let ctx = RoundContext { problem, mixing, schedule, seed };
    for t in 0..t_total {
        agents = dbsa_step(&agents, ctx, opts, b, t)?;
        let (dz, dx) = dbsa_samples(t, opts, b);
        zeta += dz;
        xi += dx;
    }
    Ok(DoubleLoopOutcome { agents, samples_zeta: zeta, samples_xi: xi })
}

/// Run DSGD for outer steps `0..t_total`; only compositional problems
/// provide the oracles it needs.
pub fn dsgd_run(
    problem: &dyn BilevelProblem,
    mixing: &MixingMatrix,
    schedule: &StepSchedule,
    opts: &DsgdOptions,
    t_total: usize,
    seed: u64,
) -> Result<DoubleLoopOutcome, AlgorithmError> {
    let comp = require_compositional(problem)?;
    let c = problem.constants();
    let mut agents = vec![LocalIterate::zeros(c.d_x, c.d_y); mixing.k()];
    let (mut zeta, mut xi) = (0, 0);
    for t in 0..t_total {
        agents = dsgd_step(&agents, comp, mixing, schedule, opts, seed, t)?;
        let (dz, dx) = dsgd_samples(t);
        zeta += dz;
        xi += dx;
    }
    Ok(DoubleLoopOutcome { agents, samples_zeta: zeta, samples_xi: xi })
}

pub fn require_compositional(problem: &dyn BilevelProblem) -> Result<&dyn CompositionalProblem, AlgorithmError> {
    problem.as_compositional().ok_or_else(|| {
        AlgorithmError::Problem(crate::error::ProblemError::NotCompositional(format!(
            "DSGD needs an inner function of the form ½‖y − h(x)‖², which `{}` does not have",
            problem.name()
        )))
    })
}
