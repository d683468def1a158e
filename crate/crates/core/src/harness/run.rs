//! Executing a configuration and measuring every recorded round.

use super::config::{Algorithm, RunConfig};
use super::trace::{Reference, Trace, TraceHeader, TraceRecord};
use crate::baselines::{
    dbsa_samples, dbsa_step, dsgd_samples, dsgd_step, fedsbo_round, require_compositional, CentralState,
    LocalIterate, StarContext,
};
use crate::dsbo::{default_b, dsbo_round, init_agents, AgentState, RoundContext};
use crate::error::AlgorithmError;
use crate::linalg::{frobenius_sq, Matrix, Vector};
use crate::problems::{implicit_hypergrad, BilevelProblem};
use crate::schedule::{make_schedule, StepSchedule};
use crate::topology::MixingMatrix;

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{source} (after {} recorded rounds)", partial.records.len())]
    Algorithm { source: AlgorithmError, partial: Box<Trace> },
}

impl RunError {
    pub fn is_divergence(&self) -> bool {
        matches!(self, RunError::Algorithm { source: AlgorithmError::Divergence { .. }, .. })
    }
}

/// Everything a run needs besides its mutable state.
pub struct Instance {
    pub problem: Box<dyn BilevelProblem>,
    pub mixing: MixingMatrix,
    pub schedule: StepSchedule,
    pub b: usize,
    pub x_star: Option<Vector>,
    pub reference: Reference,
}

impl Instance {
    pub fn new(config: &RunConfig) -> Result<Self, RunError> {
        let cfg = |e: String| RunError::Config(e);
        if config.t_total == 0 {
            return Err(cfg("t_total must be at least 1".into()));
        }
        let mixing = config.topology.build().map_err(|e| cfg(e.to_string()))?;
        let problem = config.problem.build(mixing.k()).map_err(|e| cfg(e.to_string()))?;
        problem.constants().validate().map_err(|e| cfg(e.to_string()))?;
        if config.algorithm == Algorithm::Dsgd {
            require_compositional(problem.as_ref()).map_err(|e| cfg(e.to_string()))?;
        }
        let schedule = make_schedule(&config.schedule, mixing.k(), config.t_total).map_err(|e| cfg(e.to_string()))?;
        let b = match config.b {
            Some(0) => return Err(cfg("b must be at least 1".into())),
            Some(b) => b,
            None => default_b(config.t_total, problem.constants().kappa_g),
        };
        let opt = problem.optimum();
        let reference = Reference {
            x_star: opt.as_ref().map(|o| o.x.clone()),
            f_star: opt.as_ref().map(|o| o.value),
            numerical: opt.as_ref().is_some_and(|o| o.numerical),
        };
        let x_star = opt.map(|o| Vector::from_vec(o.x));
        Ok(Self { problem, mixing, schedule, b, x_star, reference })
    }
}

enum Engine {
    Dsbo(Vec<AgentState>),
    Fedsbo(CentralState),
    Dbsa(Vec<LocalIterate>),
    Dsgd(Vec<LocalIterate>),
}

/// `(s, h, u, v)` of one agent.
pub type EstimatorView<'a> = (&'a Vector, &'a Vector, &'a Matrix, &'a [Matrix]);

/// Borrowed per-agent view used by the metrics.
pub struct View<'a> {
    pub x: Vec<&'a Vector>,
    pub y: Vec<&'a Vector>,
    /// per agent, for the single-loop methods
    pub estimators: Option<Vec<EstimatorView<'a>>>,
}

impl Engine {
    fn view(&self) -> View<'_> {
        match self {
            Engine::Dsbo(agents) => View {
                x: agents.iter().map(|a| &a.x).collect(),
                y: agents.iter().map(|a| &a.y).collect(),
                estimators: Some(agents.iter().map(|a| (&a.s, &a.h, &a.u, a.v.as_slice())).collect()),
            },
            Engine::Fedsbo(c) => View {
                x: vec![&c.x],
                y: vec![&c.y],
                estimators: Some(vec![(&c.s, &c.h, &c.u, c.v.as_slice())]),
            },
            Engine::Dbsa(agents) | Engine::Dsgd(agents) => View {
                x: agents.iter().map(|a| &a.x).collect(),
                y: agents.iter().map(|a| &a.y).collect(),
                estimators: None,
            },
        }
    }
}

fn mean_vec<'a>(items: impl ExactSizeIterator<Item = &'a Vector>) -> Vector {
    let n = items.len() as f64;
    let mut it = items;
    let mut acc = it.next().expect("nonempty").clone();
    for v in it {
        acc += v;
    }
    acc / n
}

fn mean_mat<'a>(items: impl ExactSizeIterator<Item = &'a Matrix>) -> Matrix {
    let n = items.len() as f64;
    let mut it = items;
    let mut acc = it.next().expect("nonempty").clone();
    for m in it {
        acc += m;
    }
    acc / n
}

/// `Σ_k ‖v_k − v̄‖²`.
pub fn consensus_error(values: &[&Vector]) -> f64 {
    let mean = mean_vec(values.iter().copied());
    values.iter().map(|v| (*v - &mean).norm_squared()).sum()
}

/// Metrics of one state, evaluated with the exact full-information
/// quantities at `(x̄, y*(x̄))`.
pub fn measure(
    problem: &dyn BilevelProblem,
    view: &View<'_>,
    x_star: Option<&Vector>,
    f_star: Option<f64>,
    t: usize,
    samples: (u64, u64),
) -> TraceRecord {
    let xbar = mean_vec(view.x.iter().copied());
    let ybar = mean_vec(view.y.iter().copied());
    let ystar = problem.exact_lower(&xbar);
    let gx = problem.exact_grad_x_f(&xbar, &ystar);
    let gy = problem.exact_grad_y_f(&xbar, &ystar);
    let hxy = problem.exact_hess_xy_g(&xbar, &ystar);
    let hyy = problem.exact_hess_yy_g(&xbar, &ystar);
    let grad = implicit_hypergrad(&gx, &gy, &hxy, &hyy);

    let (mut es, mut eh, mut eu, mut ev) = (None, None, None, None);
    if let Some(est) = &view.estimators {
        let s = mean_vec(est.iter().map(|e| e.0));
        let h = mean_vec(est.iter().map(|e| e.1));
        let u = mean_mat(est.iter().map(|e| e.2));
        let v = mean_mat(est.iter().flat_map(|e| e.3.iter()).collect::<Vec<_>>().into_iter());
        es = Some((s - &gx).norm_squared());
        eh = Some((h - &gy).norm_squared());
        eu = Some(frobenius_sq(&(u - &hxy)));
        ev = Some(frobenius_sq(&(v - &hyy)));
    }

    let objective = problem.objective(&xbar);
    TraceRecord {
        t,
        grad_norm_sq: grad.norm_squared(),
        objective,
        subopt: f_star.map(|f| objective - f),
        mse: x_star.map(|x| (&xbar - x).norm_squared()),
        consensus_x: consensus_error(&view.x),
        consensus_y: consensus_error(&view.y),
        est_err_s: es,
        est_err_h: eh,
        est_err_u: eu,
        est_err_v: ev,
        inner_err: (ybar - ystar).norm_squared(),
        samples_zeta: samples.0,
        samples_xi: samples.1,
    }
}

fn record_is_finite(r: &TraceRecord) -> bool {
    let opt = |v: Option<f64>| v.is_none_or(f64::is_finite);
    r.grad_norm_sq.is_finite()
        && r.objective.is_finite()
        && r.consensus_x.is_finite()
        && r.consensus_y.is_finite()
        && r.inner_err.is_finite()
        && opt(r.subopt)
        && opt(r.mse)
        && opt(r.est_err_s)
        && opt(r.est_err_h)
        && opt(r.est_err_u)
        && opt(r.est_err_v)
}

/// Execute `config` on the current rayon pool.
pub fn run(config: &RunConfig) -> Result<Trace, RunError> {
    let inst = Instance::new(config)?;
    run_instance(config, &inst)
}

/// Execute `config` on a dedicated pool of `threads` workers.
pub fn run_with_threads(config: &RunConfig, threads: Option<usize>) -> Result<Trace, RunError> {
    match threads {
        None => run(config),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build()
                .map_err(|e| RunError::Config(format!("thread pool: {e}")))?;
            pool.install(|| run(config))
        }
    }
}

/// Execute `config` against a prebuilt instance.
pub fn run_instance(config: &RunConfig, inst: &Instance) -> Result<Trace, RunError> {
    let problem = inst.problem.as_ref();
    let k = inst.mixing.k();
    let b = inst.b;
    let cadence = config.effective_cadence();
    let header = TraceHeader {
        config: config.clone(),
        reference: inst.reference.clone(),
        rho: inst.mixing.rho(),
        b,
        cadence,
        problem: problem.name().to_string(),
    };
    let mut trace = Trace { header, records: Vec::new() };
    let fail = |source: AlgorithmError, trace: Trace| RunError::Algorithm { source, partial: Box::new(trace) };

    let mut engine = match config.algorithm {
        Algorithm::Dsbo => init_agents(problem, k, b).map(Engine::Dsbo),
        Algorithm::Fedsbo => AgentState::initial(problem, b).map(Engine::Fedsbo),
        Algorithm::Dbsa | Algorithm::Dsgd => {
            let c = problem.constants();
            let init = vec![LocalIterate::zeros(c.d_x, c.d_y); k];
            Ok(if config.algorithm == Algorithm::Dbsa { Engine::Dbsa(init) } else { Engine::Dsgd(init) })
        }
    }
    .map_err(|e| fail(e, trace.clone()))?;

    let f_star = inst.reference.f_star;
    let x_star = inst.x_star.as_ref();
    let (mut zeta, mut xi) = (0u64, 0u64);
    let ctx = RoundContext { problem, mixing: &inst.mixing, schedule: &inst.schedule, seed: config.seed };
    let star = StarContext { problem, k, schedule: &inst.schedule, seed: config.seed };

    let t_total = config.t_total;
    for t in 0..=t_total {
        if t % cadence == 0 || t == t_total {
            let rec = measure(problem, &engine.view(), x_star, f_star, t, (zeta, xi));
            if !record_is_finite(&rec) {
                return Err(fail(AlgorithmError::Divergence { t, agent: 0, iterate: "metric" }, trace));
            }
            trace.records.push(rec);
        }
        if t == t_total {
            break;
        }
        let stepped = match &engine {
            Engine::Dsbo(a) => dsbo_round(a, ctx, t).map(Engine::Dsbo),
            Engine::Fedsbo(c) => fedsbo_round(c, star, t).map(Engine::Fedsbo),
            Engine::Dbsa(a) => dbsa_step(a, ctx, &config.dbsa, b, t).map(Engine::Dbsa),
            Engine::Dsgd(a) => {
                let comp = require_compositional(problem).map_err(|e| fail(e, trace.clone()))?;
                dsgd_step(a, comp, &inst.mixing, &inst.schedule, &config.dsgd, config.seed, t).map(Engine::Dsgd)
            }
        };
        engine = stepped.map_err(|e| fail(e, trace.clone()))?;
        let (dz, dx) = match config.algorithm {
            Algorithm::Dsbo | Algorithm::Fedsbo => (1, 1 + b as u64),
            Algorithm::Dbsa => dbsa_samples(t, &config.dbsa, b),
            Algorithm::Dsgd => dsgd_samples(t),
        };
        zeta += dz;
        xi += dx;
    }
    Ok(trace)
}
