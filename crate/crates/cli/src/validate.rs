//! Pre-flight checks of a configuration. Each check is computed here from
//! the raw pieces rather than trusted from the constructors.

use crate::common::{resolved_config, CmdResult, Failure};
use crate::Global;
use anyhow::anyhow;
use dsbo_core::harness::{Algorithm, RunConfig, TopologyKind};
use dsbo_core::rng::{stream, Purpose};
use dsbo_core::{default_b, make_schedule, BilevelProblem, Matrix, Vector};

const TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub enum Verdict {
    Pass,
    Fail,
    Skip,
}

#[derive(Debug, Clone)]
pub struct Check {
    pub name: String,
    pub verdict: Verdict,
    pub detail: String,
}

impl Check {
    fn new(name: &str, pass: bool, detail: impl Into<String>) -> Self {
        let verdict = if pass { Verdict::Pass } else { Verdict::Fail };
        Self { name: name.into(), verdict, detail: detail.into() }
    }

    fn skip(name: &str, why: &str) -> Self {
        Self { name: name.into(), verdict: Verdict::Skip, detail: why.into() }
    }
}

fn raw_weights(cfg: &RunConfig) -> Result<Matrix, String> {
    let t = &cfg.topology;
    match t.kind {
        TopologyKind::Custom => {
            let rows = t.weights.as_ref().ok_or("custom topology needs `weights`")?;
            if rows.len() != t.k || rows.iter().any(|r| r.len() != t.k) {
                return Err(format!("weights must be {0} x {0}", t.k));
            }
            Ok(Matrix::from_fn(t.k, t.k, |i, j| rows[i][j]))
        }
        _ => t.build().map(|m| m.weights().clone()).map_err(|e| e.to_string()),
    }
}

/// `‖W − 𝟙𝟙ᵀ/K‖₂²` from a dense eigendecomposition.
fn rho_dense(w: &Matrix) -> f64 {
    let k = w.nrows();
    let d = (w + w.transpose()) * 0.5 - Matrix::from_element(k, k, 1.0 / k as f64);
    d.symmetric_eigenvalues().amax().powi(2)
}

fn topology_checks(cfg: &RunConfig) -> Vec<Check> {
    let w = match raw_weights(cfg) {
        Ok(w) => w,
        Err(e) => return vec![Check::new("topology/shape", false, e)],
    };
    let k = w.nrows();
    let mut out = vec![Check::new("topology/shape", k > 0, format!("{k} agents"))];
    let neg = (0..k).flat_map(|i| (0..k).map(move |j| (i, j))).find(|&(i, j)| !(w[(i, j)] >= 0.0));
    out.push(Check::new(
        "topology/nonnegative",
        neg.is_none(),
        match neg {
            Some((i, j)) => format!("w[{i}][{j}] = {}", w[(i, j)]),
            None => format!("min entry = {:.4}", w.min()),
        },
    ));
    let asym = (&w - w.transpose()).amax();
    out.push(Check::new("topology/symmetric", asym <= TOL, format!("max |w_ij - w_ji| = {asym:.3e}")));
    let worst_sum = (0..k)
        .flat_map(|i| [w.row(i).sum(), w.column(i).sum()])
        .map(|s| (s - 1.0).abs())
        .fold(0.0, f64::max);
    out.push(Check::new("topology/doubly-stochastic", worst_sum <= TOL, format!("max |sum - 1| = {worst_sum:.3e}")));
    let rho = rho_dense(&w);
    out.push(Check::new("topology/connected", rho < 1.0 - TOL, format!("rho = {rho:.4}")));
    out
}

fn problem_checks(cfg: &RunConfig, problem: &dyn BilevelProblem) -> Vec<Check> {
    let c = problem.constants();
    let v = c.violations();
    let mut out = vec![Check::new(
        "problem/constants",
        v.is_empty(),
        if v.is_empty() {
            format!("mu_g = {}, l_g = {}, kappa_g = {}", c.mu_g, c.l_g, c.kappa_g)
        } else {
            v.join("; ")
        },
    )];
    if cfg.algorithm == Algorithm::Dsgd {
        let ok = problem.as_compositional().is_some();
        out.push(Check::new("algorithm/compatible", ok, format!("dsgd on {}", problem.name())));
    }
    let b = cfg.b.unwrap_or_else(|| default_b(cfg.t_total, c.kappa_g));
    out.push(Check::new("algorithm/b", b >= 1, format!("b = {b}")));
    out
}

/// Every Hessian draw must satisfy `‖I − H/L_g‖ ≤ 1 − kappa_g`, the
/// condition under which the Neumann chain is a contraction.
fn hessian_check(problem: &dyn BilevelProblem, x: &Vector, y: &Vector, draws: usize) -> Check {
    let c = problem.constants();
    let (lo, hi) = (c.kappa_g * c.l_g, (2.0 - c.kappa_g) * c.l_g);
    let (mut min, mut max) = (f64::INFINITY, f64::NEG_INFINITY);
    for n in 0..draws {
        let agent = n % problem.agents();
        let mut rng = stream(0, Purpose::Diagnostics, agent, n, 1);
        for h in problem.sample(agent, x, y, 1, &mut rng).hyy_g_draws {
            let e = ((&h + h.transpose()) * 0.5).symmetric_eigenvalues();
            min = min.min(e.min());
            max = max.max(e.max());
        }
    }
    let ok = min >= lo - TOL && max <= hi + TOL;
    Check::new(
        "problem/hessian-spectrum",
        ok,
        format!("{draws} draws, eigenvalues in [{min:.4}, {max:.4}], admissible [{lo:.4}, {hi:.4}]"),
    )
}

/// Running first and second moments of a flattened vector quantity.
struct Moments {
    n: usize,
    sum: Vec<f64>,
    sum_sq: Vec<f64>,
}

impl Moments {
    fn new(d: usize) -> Self {
        Self { n: 0, sum: vec![0.0; d], sum_sq: vec![0.0; d] }
    }

    fn push(&mut self, v: &[f64]) {
        self.n += 1;
        for (i, x) in v.iter().enumerate() {
            self.sum[i] += x;
            self.sum_sq[i] += x * x;
        }
    }

    /// Distance of the sample mean from `exact`, in standard errors of the
    /// vector mean.
    fn standard_errors(&self, exact: &[f64]) -> f64 {
        let n = self.n as f64;
        let (mut dist, mut var) = (0.0, 0.0);
        for (i, e) in exact.iter().enumerate() {
            let m = self.sum[i] / n;
            dist += (m - e).powi(2);
            var += (self.sum_sq[i] / n - m * m).max(0.0) * n / (n - 1.0);
        }
        let se = (var / n).sqrt();
        let slack = 1e-9 * (1.0 + exact.iter().map(|e| e * e).sum::<f64>().sqrt());
        if dist.sqrt() <= slack {
            0.0
        } else {
            dist.sqrt() / se.max(f64::MIN_POSITIVE)
        }
    }
}

/// Sample means of the five oracle outputs against the exact network-average
/// values.
fn unbiasedness_check(problem: &dyn BilevelProblem, x: &Vector, y: &Vector, draws: usize) -> Check {
    const LIMIT: f64 = 4.0;
    let exact: [Vec<f64>; 5] = [
        problem.exact_grad_x_f(x, y).as_slice().to_vec(),
        problem.exact_grad_y_f(x, y).as_slice().to_vec(),
        problem.exact_grad_y_g(x, y).as_slice().to_vec(),
        problem.exact_hess_xy_g(x, y).as_slice().to_vec(),
        problem.exact_hess_yy_g(x, y).as_slice().to_vec(),
    ];
    let names = ["grad_x_f", "grad_y_f", "grad_y_g", "hess_xy_g", "hess_yy_g"];
    let mut m: Vec<Moments> = exact.iter().map(|e| Moments::new(e.len())).collect();
    // whole passes over the agents so each contributes equally
    let k = problem.agents();
    let n = draws.div_ceil(k).max(2) * k;
    for i in 0..n {
        let agent = i % k;
        let mut rng = stream(0, Purpose::Diagnostics, agent, i, 2);
        let s = problem.sample(agent, x, y, 1, &mut rng);
        m[0].push(s.gx_f.as_slice());
        m[1].push(s.gy_f.as_slice());
        m[2].push(s.gy_g.as_slice());
        m[3].push(s.hxy_g.as_slice());
        m[4].push(s.hyy_g_draws[0].as_slice());
    }
    let z: Vec<f64> = m.iter().zip(&exact).map(|(m, e)| m.standard_errors(e)).collect();
    let ok = z.iter().all(|&z| z <= LIMIT);
    let detail: Vec<String> = names.iter().zip(&z).map(|(n, z)| format!("{n} {z:.2}")).collect();
    Check::new(
        "problem/unbiased-oracle",
        ok,
        format!("{n} draws, standard errors from exact: {} (limit {LIMIT})", detail.join(", ")),
    )
}

pub fn run_checks(cfg: &RunConfig, hessian_draws: usize, oracle_draws: usize) -> Vec<Check> {
    let mut checks = topology_checks(cfg);
    let schedule = make_schedule(&cfg.schedule, cfg.topology.k, cfg.t_total);
    checks.push(Check::new(
        "schedule",
        schedule.is_ok() && cfg.t_total >= 1,
        match &schedule {
            Ok(s) => format!("alpha_0 = {:.4e}, beta_0 = {:.4e}", s.alpha(0), s.beta(0)),
            Err(e) => e.to_string(),
        },
    ));
    match cfg.problem.build(cfg.topology.k) {
        Err(e) => {
            checks.push(Check::new("problem/constants", false, e.to_string()));
            for name in ["problem/hessian-spectrum", "problem/unbiased-oracle"] {
                checks.push(Check::skip(name, "problem could not be built"));
            }
        }
        Ok(problem) => {
            let problem = problem.as_ref();
            checks.extend(problem_checks(cfg, problem));
            let x = Vector::zeros(problem.constants().d_x);
            let y = problem.exact_lower(&x);
            checks.push(hessian_check(problem, &x, &y, hessian_draws));
            checks.push(unbiasedness_check(problem, &x, &y, oracle_draws));
        }
    }
    checks
}

pub fn cmd_validate(g: &Global, hessian_draws: usize, oracle_draws: usize) -> CmdResult {
    let cfg = resolved_config(g)?;
    let checks = run_checks(&cfg, hessian_draws, oracle_draws);
    for c in &checks {
        let tag = match c.verdict {
            Verdict::Pass => "PASS",
            Verdict::Fail => "FAIL",
            Verdict::Skip => "SKIP",
        };
        if !g.quiet || c.verdict == Verdict::Fail {
            println!("{tag} {}: {}", c.name, c.detail);
        }
    }
    let failed: Vec<&str> = checks.iter().filter(|c| c.verdict == Verdict::Fail).map(|c| c.name.as_str()).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::config(anyhow!("failed checks: {}", failed.join(", "))))
    }
}
