//! Acceptance checks. Each test prints one `PASS`/`FAIL` line with the
//! measured quantity before asserting.

use dsbo_core::harness::{
    loglog_slope, mean_grad_norm, median, run, run_with_threads, speedup_analysis, Algorithm, ProblemConfig,
    RunConfig, TopologyConfig, Trace, DEFAULT_SLOPE_WINDOW,
};
use dsbo_core::problems::{
    HyperOpt, HyperOptParams, PolicyEval, PolicyEvalNoise, PolicyEvalParams, Quadratic, QuadraticParams,
};
use dsbo_core::rng::{stream, Purpose};
use dsbo_core::topology::gossip_mix_vectors;
use dsbo_core::{
    build_ring, neumann_chain, BilevelProblem, DbsaOptions, DsgdOptions, Matrix, ScheduleConfig, Vector,
};
use nalgebra::SymmetricEigen;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use std::io::Write;
use std::time::Instant;

const SEEDS: u64 = 10;

fn report(id: u32, name: &str, ok: bool, detail: String, started: Instant) {
    let verdict = if ok { "PASS" } else { "FAIL" };
    // straight to the handle so the line survives libtest's output capture
    let line = format!("criterion {id} [{verdict}] {name}: {detail} ({:.1} s)\n", started.elapsed().as_secs_f64());
    let _ = std::io::stdout().lock().write_all(line.as_bytes());
}

fn gaussian_vec(n: usize, rng: &mut impl Rng) -> Vector {
    Vector::from_fn(n, |_, _| StandardNormal.sample(rng))
}

fn base_config(algorithm: Algorithm, problem: ProblemConfig, topology: TopologyConfig, t_total: usize, schedule: ScheduleConfig) -> RunConfig {
    RunConfig {
        algorithm,
        problem,
        topology,
        t_total,
        schedule,
        b: None,
        seed: 0,
        cadence: None,
        mean_grad_norm: false,
        output: None,
        dbsa: DbsaOptions::default(),
        dsgd: DsgdOptions::default(),
    }
}

fn run_seeds(cfg: &RunConfig) -> Vec<Trace> {
    (0..SEEDS)
        .into_par_iter()
        .map(|seed| run(&RunConfig { seed, ..cfg.clone() }).expect("run succeeds"))
        .collect()
}

fn policy_params(n_states: usize) -> PolicyEvalParams {
    PolicyEvalParams { n_states, feat_dim: 5, lambda: 1.0, seed: 7, ..Default::default() }
}

fn central_difference(p: &dyn BilevelProblem, x: &Vector) -> Vector {
    Vector::from_fn(x.len(), |i, _| {
        let h = 1e-5 * x[i].abs().max(1.0);
        let mut plus = x.clone();
        let mut minus = x.clone();
        plus[i] += h;
        minus[i] -= h;
        (p.objective(&plus) - p.objective(&minus)) / (2.0 * h)
    })
}

#[test]
fn criterion_01_hypergradient_matches_finite_differences() {
    let started = Instant::now();
    let quad = Quadratic::new(4, &QuadraticParams { d_x: 6, d_y: 5, seed: 21, ..Default::default() }).unwrap();
    let pe = PolicyEval::new(3, &PolicyEvalParams { n_states: 30, seed: 5, ..Default::default() }).unwrap();
    let problems: [&dyn BilevelProblem; 2] = [&quad, &pe];
    let mut worst = 0.0f64;
    for (pi, p) in problems.iter().enumerate() {
        let mut rng = stream(1, Purpose::Diagnostics, pi, 0, 0);
        for _ in 0..20 {
            let x = gaussian_vec(p.constants().d_x, &mut rng);
            let g = p.exact_hypergrad(&x);
            let fd = central_difference(*p, &x);
            worst = worst.max((&g - &fd).norm() / g.norm().max(1e-12));
        }
    }
    let ok = worst < 1e-5;
    report(1, "hypergradient vs central differences", ok, format!("max relative error {worst:.3e}"), started);
    assert!(ok);
}

#[test]
fn criterion_02_neumann_inverse_bound_and_geometric_decay() {
    let started = Instant::now();
    let (l_g, kappa) = (1.0, 0.5);
    let mut rng = stream(2, Purpose::Diagnostics, 0, 0, 0);
    let g = Matrix::from_fn(3, 3, |_, _| StandardNormal.sample(&mut rng));
    let q = g.qr().q();
    let a = &q * Matrix::from_diagonal(&Vector::from_vec(vec![0.5, 0.8, 1.0])) * q.transpose();
    let a_inv = a.clone().try_inverse().unwrap();
    let spec = |m: &Matrix| SymmetricEigen::new((m + m.transpose()) * 0.5).eigenvalues.amax();
    let errs: Vec<f64> = [5usize, 10, 20, 40]
        .iter()
        .map(|&b| spec(&(neumann_chain(&vec![a.clone(); b], l_g).unwrap() - &a_inv)))
        .collect();
    let bound_ok = [5usize, 10, 20, 40]
        .iter()
        .zip(&errs)
        .all(|(&b, e)| *e <= (1.0f64 - kappa).powi(b as i32 + 1) / (l_g * kappa.powi(3)));
    let five = (1.0f64 - kappa).powi(5);
    let r = errs[1] / errs[0];
    let ratio_ok = r >= 0.5 * five * 0.9 && r <= 1.1 * five;
    let ok = bound_ok && ratio_ok;
    report(2, "Neumann inverse bound", ok, format!("errors {:?}, b=5→10 ratio {r:.5} (target {five:.5})", errs.iter().map(|e| format!("{e:.3e}")).collect::<Vec<_>>()), started);
    assert!(ok);
}

#[test]
fn criterion_03_gossip_contraction() {
    let started = Instant::now();
    let w = build_ring(5).unwrap();
    let eig = SymmetricEigen::new(w.weights() - Matrix::from_element(5, 5, 0.2));
    let rho_oracle = eig.eigenvalues.amax().powi(2);
    let rho = w.rho();
    let mut worst = f64::NEG_INFINITY;
    let mut rng = stream(3, Purpose::Diagnostics, 0, 0, 0);
    for _ in 0..100 {
        let d = rng.random_range(1..8);
        let vals: Vec<Vector> = (0..5).map(|_| gaussian_vec(d, &mut rng)).collect();
        let mean = vals.iter().fold(Vector::zeros(d), |a, v| a + v) / 5.0;
        let dev = |vs: &[Vector]| vs.iter().map(|v| (v - &mean).norm_squared()).sum::<f64>().sqrt();
        let mixed = gossip_mix_vectors(&vals, &w).unwrap();
        worst = worst.max(dev(&mixed) - (rho.sqrt() * dev(&vals) + 1e-10));
    }
    let ok = worst <= 0.0 && (rho - rho_oracle).abs() < 1e-10 && (rho - 0.29089).abs() < 1e-4;
    report(3, "gossip contraction on ring K=5", ok, format!("rho {rho:.5} (oracle {rho_oracle:.5}), worst margin {worst:.3e}"), started);
    assert!(ok);
}

fn policy_dsbo(k: usize, n_states: usize, t_total: usize, schedule: ScheduleConfig) -> RunConfig {
    let mut c = base_config(
        Algorithm::Dsbo,
        ProblemConfig::PolicyEval(policy_params(n_states)),
        TopologyConfig::ring(k),
        t_total,
        schedule,
    );
    c.b = Some(1);
    c
}

/// Per-seed slopes, averaged; equivalent to the slope of the mean log-MSE.
fn mean_slope(traces: &[Trace]) -> f64 {
    let s: Vec<f64> =
        traces.iter().map(|t| loglog_slope(&t.records, "mse", DEFAULT_SLOPE_WINDOW).unwrap()).collect();
    s.iter().sum::<f64>() / s.len() as f64
}

#[test]
fn criterion_04_strongly_convex_rate() {
    let started = Instant::now();
    let cfg = policy_dsbo(5, 50, 10_000, ScheduleConfig::Diminishing { c1: 50.0, mu: 1.0 });
    let traces = run_seeds(&cfg);
    let slope = mean_slope(&traces);
    let ok = (-1.25..=-0.75).contains(&slope);
    report(4, "tail log-log slope of MSE", ok, format!("mean slope {slope:.3} over {SEEDS} seeds"), started);
    assert!(ok);
}

#[test]
fn criterion_05_nonconvex_statistic_scaling() {
    let started = Instant::now();
    let stat = |t_total: usize| -> f64 {
        let mut cfg = base_config(
            Algorithm::Dsbo,
            ProblemConfig::Quadratic(QuadraticParams { seed: 3, ..Default::default() }),
            TopologyConfig::ring(4),
            t_total,
            ScheduleConfig::Constant { c0: 0.1, c_beta: 1.0 },
        );
        cfg.mean_grad_norm = true;
        let vals: Vec<f64> = run_seeds(&cfg).iter().map(|t| mean_grad_norm(&t.records, t.header.cadence).unwrap()).collect();
        vals.iter().sum::<f64>() / vals.len() as f64
    };
    let (short, long) = (stat(1600), stat(6400));
    let ratio = long / short;
    let ok = ratio <= 0.65;
    report(5, "averaged gradient norm, T=6400 vs T=1600", ok, format!("{long:.4e} / {short:.4e} = {ratio:.3}"), started);
    assert!(ok);
}

#[test]
fn criterion_06_linear_speedup() {
    let started = Instant::now();
    let eps = 0.8e-6;
    let groups: Vec<(usize, Vec<Vec<_>>)> = [2usize, 4, 8]
        .iter()
        .map(|&k| {
            let mut params = policy_params(50);
            params.heterogeneous = false;
            let topo = if k == 2 { TopologyConfig::complete(2) } else { TopologyConfig::ring(k) };
            let mut cfg = base_config(
                Algorithm::Dsbo,
                ProblemConfig::PolicyEval(params),
                topo,
                10_000,
                ScheduleConfig::Diminishing { c1: 50.0, mu: 1.0 },
            );
            cfg.b = Some(1);
            (k, run_seeds(&cfg).into_iter().map(|t| t.records).collect())
        })
        .collect();
    let rows = speedup_analysis(&groups, eps);
    let looser: Vec<String> = [1.5e-6, 2e-6]
        .iter()
        .map(|&e| {
            let r = speedup_analysis(&groups, e);
            format!("eps {e:e}: {:?}", r.iter().map(|r| r.total.map(|b| b.median)).collect::<Vec<_>>())
        })
        .collect();
    let censored: usize = rows.iter().map(|r| r.censored).sum();
    let totals: Vec<f64> = rows.iter().filter_map(|r| r.total.map(|b| b.median)).collect();
    let per: Vec<f64> = rows.iter().filter_map(|r| r.per_agent.map(|b| b.median)).collect();
    let spread = totals.iter().cloned().fold(0.0, f64::max) / totals.iter().cloned().fold(f64::INFINITY, f64::min);
    let ok = censored == 0 && totals.len() == 3 && spread <= 2.0 && per.windows(2).all(|w| w[1] < w[0]);
    report(
        6,
        "linear speedup across K = 2, 4, 8",
        ok,
        format!(
            "eps {eps:e}: total medians {totals:?}, per-agent medians {per:?}, spread {spread:.2}, censored {censored}; totals at {}",
            looser.join(", ")
        ),
        started,
    );
    assert!(ok);
}

#[test]
fn criterion_07_bias_separation() {
    let started = Instant::now();
    let t_dsbo = 10_000;
    let dsbo_cfg = policy_dsbo(5, 50, t_dsbo, ScheduleConfig::Diminishing { c1: 50.0, mu: 1.0 });
    // same per-agent inner-sample budget: DSGD draws t + 1 at outer step t
    let budget = (t_dsbo * 2) as u64;
    let t_dsgd = (0..).take_while(|&t: &u64| t * (t + 1) / 2 <= budget).last().unwrap() as usize;
    let dsgd_cfg = RunConfig { algorithm: Algorithm::Dsgd, t_total: t_dsgd, b: Some(1), ..dsbo_cfg.clone() };
    let dsbo_final: Vec<f64> = run_seeds(&dsbo_cfg).iter().map(|t| t.final_record().unwrap().mse.unwrap()).collect();
    let dsgd_plateau: Vec<f64> = run_seeds(&dsgd_cfg)
        .iter()
        .map(|t| {
            let tail: Vec<f64> = t.records.iter().filter(|r| r.t * 10 >= t_dsgd * 9).map(|r| r.mse.unwrap()).collect();
            tail.iter().sum::<f64>() / tail.len() as f64
        })
        .collect();
    let (m_dsbo, m_dsgd) = (median(&dsbo_final).unwrap(), median(&dsgd_plateau).unwrap());
    let separated = m_dsgd >= 3.0 * m_dsbo;

    let homog = PolicyEvalParams { heterogeneous: false, noise: PolicyEvalNoise::zero(), ..policy_params(50) };
    let constant = ScheduleConfig::Constant { c0: 2.0, c_beta: 1.0 };
    let mut h_dsbo = base_config(Algorithm::Dsbo, ProblemConfig::PolicyEval(homog), TopologyConfig::ring(5), 2000, constant);
    h_dsbo.b = Some(1);
    let h_dsgd = RunConfig { algorithm: Algorithm::Dsgd, t_total: 400, ..h_dsbo.clone() };
    let mse_h_dsbo = run(&h_dsbo).unwrap().final_record().unwrap().mse.unwrap();
    let mse_h_dsgd = run(&h_dsgd).unwrap().final_record().unwrap().mse.unwrap();
    let homog_ok = mse_h_dsbo < 1e-6 && mse_h_dsgd < 1e-6;

    let ok = separated && homog_ok;
    report(
        7,
        "bias separation DSGD vs DSBO",
        ok,
        format!(
            "heterogeneous medians: DSGD plateau {m_dsgd:.3e} ({t_dsgd} outer steps), DSBO final {m_dsbo:.3e}, ratio {:.1}; homogeneous final mse: DSBO {mse_h_dsbo:.2e}, DSGD {mse_h_dsgd:.2e}",
            m_dsgd / m_dsbo
        ),
        started,
    );
    assert!(ok);
}

#[test]
fn criterion_08_fedsbo_equals_dsbo_single_agent() {
    let started = Instant::now();
    let mut all_equal = true;
    for problem in [
        ProblemConfig::Quadratic(QuadraticParams { seed: 9, ..Default::default() }),
        ProblemConfig::PolicyEval(policy_params(20)),
    ] {
        let dsbo = base_config(
            Algorithm::Dsbo,
            problem,
            TopologyConfig::complete(1),
            300,
            ScheduleConfig::Diminishing { c1: 10.0, mu: 1.0 },
        );
        let fed = RunConfig { algorithm: Algorithm::Fedsbo, ..dsbo.clone() };
        for seed in 0..3 {
            let a = run(&RunConfig { seed, ..dsbo.clone() }).unwrap();
            let b = run(&RunConfig { seed, ..fed.clone() }).unwrap();
            let body = |t: &Trace| t.to_csv_string().lines().skip(1).collect::<Vec<_>>().join("\n");
            all_equal &= a.records == b.records && body(&a) == body(&b);
        }
    }
    report(8, "FedSBO vs DSBO at K=1", all_equal, format!("bitwise-identical traces: {all_equal}"), started);
    assert!(all_equal);
}

#[test]
fn criterion_09_determinism_across_thread_counts() {
    let started = Instant::now();
    let mut ok = true;
    for algorithm in [Algorithm::Dsbo, Algorithm::Fedsbo, Algorithm::Dbsa, Algorithm::Dsgd] {
        let cfg = RunConfig {
            seed: 4,
            ..base_config(
                algorithm,
                ProblemConfig::PolicyEval(policy_params(20)),
                TopologyConfig::ring(6),
                120,
                ScheduleConfig::Diminishing { c1: 10.0, mu: 1.0 },
            )
        };
        let outputs: Vec<String> =
            [1, 2, 4, 7].iter().map(|&n| run_with_threads(&cfg, Some(n)).unwrap().to_csv_string()).collect();
        ok &= outputs.windows(2).all(|w| w[0] == w[1]);
    }
    report(9, "byte-identical output for 1, 2, 4, 7 threads", ok, format!("identical: {ok}"), started);
    assert!(ok);
}

/// `‖mean − exact‖ ≤ 3 √(tr Σ̂ / N)`: a three-standard-error ball for the
/// sample mean of a vector quantity.
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

    /// `(‖mean − exact‖, 3·SE)`
    fn check(&self, exact: &[f64]) -> (f64, f64) {
        let n = self.n as f64;
        let mut dist = 0.0;
        let mut trace = 0.0;
        for i in 0..exact.len() {
            let m = self.sum[i] / n;
            dist += (m - exact[i]).powi(2);
            trace += (self.sum_sq[i] / n - m * m).max(0.0) * n / (n - 1.0);
        }
        (dist.sqrt(), 3.0 * (trace / n).sqrt() + 1e-12)
    }
}

fn unbiasedness(p: &dyn BilevelProblem, x: &Vector, y: &Vector, draws: usize, b: usize) -> Vec<(&'static str, f64, f64)> {
    let c = p.constants();
    let k = p.agents();
    let names = ["grad_x_f", "grad_y_f", "grad_y_g", "hess_xy_g", "hess_yy_g"];
    let exact: [Vec<f64>; 5] = [
        p.exact_grad_x_f(x, y).as_slice().to_vec(),
        p.exact_grad_y_f(x, y).as_slice().to_vec(),
        p.exact_grad_y_g(x, y).as_slice().to_vec(),
        p.exact_hess_xy_g(x, y).as_slice().to_vec(),
        p.exact_hess_yy_g(x, y).as_slice().to_vec(),
    ];
    let dims = [c.d_x, c.d_y, c.d_y, c.d_x * c.d_y, c.d_y * c.d_y];
    let chunks = 8usize;
    let per = draws / chunks;
    let partial: Vec<Vec<Moments>> = (0..chunks)
        .into_par_iter()
        .map(|chunk| {
            let mut m: Vec<Moments> = dims.iter().map(|&d| Moments::new(d)).collect();
            for n in chunk * per..(chunk + 1) * per {
                // cycle through agents so the mean targets the network average
                let agent = n % k;
                let mut rng = stream(10, Purpose::Diagnostics, agent, n, 0);
                let s = p.sample(agent, x, y, b, &mut rng);
                m[0].push(s.gx_f.as_slice());
                m[1].push(s.gy_f.as_slice());
                m[2].push(s.gy_g.as_slice());
                m[3].push(s.hxy_g.as_slice());
                for h in &s.hyy_g_draws {
                    m[4].push(h.as_slice());
                }
            }
            m
        })
        .collect();
    (0..5)
        .map(|q| {
            let mut total = Moments::new(dims[q]);
            for part in &partial {
                total.n += part[q].n;
                for i in 0..dims[q] {
                    total.sum[i] += part[q].sum[i];
                    total.sum_sq[i] += part[q].sum_sq[i];
                }
            }
            let (dist, tol) = total.check(&exact[q]);
            (names[q], dist, tol)
        })
        .collect()
}

#[test]
fn criterion_10_oracle_unbiasedness() {
    let started = Instant::now();
    // K divides 10⁵ so every agent contributes equally
    let quad = Quadratic::new(4, &QuadraticParams { d_x: 4, d_y: 3, seed: 12, ..Default::default() }).unwrap();
    let pe = PolicyEval::new(5, &PolicyEvalParams { n_states: 20, seed: 3, ..Default::default() }).unwrap();
    let ho = HyperOpt::from_params(5, &HyperOptParams { n_points: 200, dim: 6, seed: 1, batch: 2, ..Default::default() })
        .unwrap();
    let mut rng = stream(11, Purpose::Diagnostics, 0, 0, 0);
    let mut lines = Vec::new();
    let mut ok = true;
    let problems: [(&str, &dyn BilevelProblem); 3] = [("quadratic", &quad), ("policy-eval", &pe), ("hyperopt", &ho)];
    for (name, p) in problems {
        let c = p.constants();
        let x = gaussian_vec(c.d_x, &mut rng) * 0.5;
        let y = gaussian_vec(c.d_y, &mut rng) * 0.5;
        for (q, dist, tol) in unbiasedness(p, &x, &y, 100_000, 2) {
            ok &= dist <= tol;
            lines.push(format!("{name}/{q} {:.2}", dist / tol * 3.0));
        }
    }
    report(10, "oracle unbiasedness (distance in standard errors)", ok, lines.join(", "), started);
    assert!(ok);
}
