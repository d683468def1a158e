//! Reference experiments: policy evaluation rates, hyperparameter
//! optimization against the double-loop baseline, and samples-to-accuracy
//! across network sizes.

use crate::common::{
    apply_overrides, batch_outcome, trace_of, write_json, write_trace, CmdResult, Failure, Status,
};
use crate::Global;
use dsbo_core::harness::{
    loglog_slope, speedup_analysis, Algorithm, Band, Instance, ProblemConfig, RunConfig, SpeedupRow, TopologyConfig,
    Trace, DEFAULT_SLOPE_WINDOW,
};
use dsbo_core::problems::{HyperOptParams, PolicyEvalParams};
use dsbo_core::{baselines, DbsaOptions, DsgdOptions, ScheduleConfig};
use rayon::prelude::*;
use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    Hyperopt,
    PolicyEval,
    Speedup,
}

impl Experiment {
    fn name(self) -> &'static str {
        match self {
            Experiment::Hyperopt => "hyperopt",
            Experiment::PolicyEval => "policy-eval",
            Experiment::Speedup => "speedup",
        }
    }

    fn default_ks(self) -> Vec<usize> {
        match self {
            Experiment::Speedup => vec![2, 4, 8],
            _ => vec![5, 10, 20],
        }
    }

    /// Shared settings before `--set` overrides and per-job changes.
    pub fn base(self) -> RunConfig {
        let (problem, schedule, t_total, b, cadence) = match self {
            Experiment::PolicyEval => (
                ProblemConfig::PolicyEval(PolicyEvalParams { n_states: 100, feat_dim: 5, lambda: 1.0, ..Default::default() }),
                ScheduleConfig::Capped { alpha_max: 0.01, mu: 1.0, beta_max: 0.5, beta_c: 50.0 },
                10_000,
                None,
                None,
            ),
            Experiment::Hyperopt => (
                ProblemConfig::Hyperopt(HyperOptParams::default()),
                ScheduleConfig::Constant { c0: 0.1, c_beta: 10.0 },
                2_000,
                Some(200),
                Some(10),
            ),
            Experiment::Speedup => (
                ProblemConfig::PolicyEval(PolicyEvalParams {
                    n_states: 50,
                    feat_dim: 5,
                    lambda: 1.0,
                    seed: 7,
                    heterogeneous: false,
                    ..Default::default()
                }),
                ScheduleConfig::Diminishing { c1: 50.0, mu: 1.0 },
                10_000,
                Some(1),
                None,
            ),
        };
        RunConfig {
            algorithm: Algorithm::Dsbo,
            problem,
            topology: TopologyConfig::ring(5),
            t_total,
            schedule,
            b,
            seed: 0,
            cadence,
            mean_grad_norm: false,
            output: None,
            dbsa: DbsaOptions::default(),
            dsgd: DsgdOptions::default(),
        }
    }
}

pub const SPEEDUP_EPS: [f64; 3] = [0.8e-6, 1.5e-6, 2e-6];
const DEFAULT_SEEDS: u64 = 10;

#[derive(Debug, Clone, Serialize)]
pub struct Job {
    pub label: String,
    pub config: RunConfig,
}

fn topology_for(k: usize) -> TopologyConfig {
    // a two-node ring would double its single edge
    if k <= 2 {
        TopologyConfig::complete(k)
    } else {
        TopologyConfig::ring(k)
    }
}

fn dsbo_job(base: &RunConfig, k: usize) -> Job {
    Job { label: format!("dsbo-k{k}"), config: RunConfig { topology: topology_for(k), ..base.clone() } }
}

/// Largest number of outer steps whose cumulative per-agent inner samples
/// stay within `budget`.
pub fn steps_within(budget: u64, per_step: impl Fn(usize) -> u64) -> usize {
    let mut used = 0u64;
    let mut n = 0;
    loop {
        used += per_step(n);
        if used > budget {
            return n;
        }
        n += 1;
    }
}

/// Inner-sample budget per agent of a DSBO run of `cfg`.
fn dsbo_budget(cfg: &RunConfig) -> CmdResult<(u64, usize)> {
    let inst = Instance::new(cfg).map_err(Failure::from_run)?;
    Ok((cfg.t_total as u64 * (1 + inst.b as u64), inst.b))
}

pub fn jobs(exp: Experiment, base: &RunConfig, ks: &[usize]) -> CmdResult<Vec<Job>> {
    let mut out: Vec<Job> = ks.iter().map(|&k| dsbo_job(base, k)).collect();
    let k0 = ks[0];
    let first = out[0].config.clone();
    match exp {
        Experiment::PolicyEval => {
            let (budget, _) = dsbo_budget(&first)?;
            let steps = steps_within(budget, |t| baselines::dsgd_samples(t).1);
            let config = RunConfig { algorithm: Algorithm::Dsgd, t_total: steps.max(1), ..first };
            out.push(Job { label: format!("dsgd-k{k0}"), config });
        }
        Experiment::Hyperopt => {
            let (budget, b) = dsbo_budget(&first)?;
            // the outer objective has no direct x-dependence here, so the
            // baseline needs its implicit correction term to move at all
            let dbsa = DbsaOptions { full_hypergrad: true, ..first.dbsa };
            let steps = steps_within(budget, |t| baselines::dbsa_samples(t, &dbsa, b).1);
            let config = RunConfig { algorithm: Algorithm::Dbsa, t_total: steps.max(1), dbsa, ..first };
            out.push(Job { label: format!("dbsa-k{k0}"), config });
        }
        Experiment::Speedup => {}
    }
    Ok(out)
}

#[derive(Debug, Serialize)]
struct JobSummary {
    label: String,
    algorithm: Algorithm,
    k: usize,
    t_total: usize,
    runs: usize,
    failed: usize,
    /// per-agent inner samples at the last record
    samples_per_agent: Option<u64>,
    samples_total: Option<u64>,
    mse_slope: Option<Band>,
    /// mean of the per-seed slopes, the slope of the mean log-MSE curve
    mse_slope_mean: Option<f64>,
    final_mse: Option<Band>,
    final_objective: Option<Band>,
    best_objective: Option<Band>,
}

fn summarize(job: &Job, traces: &[&Trace], failed: usize) -> JobSummary {
    let last = |f: &dyn Fn(&Trace) -> Option<f64>| -> Option<Band> {
        let v: Vec<f64> = traces.iter().filter_map(|t| f(t)).collect();
        (v.len() == traces.len()).then(|| Band::of(&v)).flatten()
    };
    let slopes: Vec<f64> =
        traces.iter().filter_map(|t| loglog_slope(&t.records, "mse", DEFAULT_SLOPE_WINDOW).ok()).collect();
    let samples = traces.first().and_then(|t| t.final_record()).map(|r| r.samples_xi);
    let k = job.config.topology.k;
    JobSummary {
        label: job.label.clone(),
        algorithm: job.config.algorithm,
        k,
        t_total: job.config.t_total,
        runs: traces.len() + failed,
        failed,
        samples_per_agent: samples,
        samples_total: samples.map(|s| s * k as u64),
        mse_slope: (slopes.len() == traces.len()).then(|| Band::of(&slopes)).flatten(),
        mse_slope_mean: (!slopes.is_empty() && slopes.len() == traces.len())
            .then(|| slopes.iter().sum::<f64>() / slopes.len() as f64),
        final_mse: last(&|t| t.final_record().and_then(|r| r.mse)),
        final_objective: last(&|t| t.final_record().map(|r| r.objective)),
        best_objective: last(&|t| t.records.iter().map(|r| r.objective).min_by(f64::total_cmp)),
    }
}

#[derive(Debug, Serialize)]
struct SpeedupTable {
    eps: f64,
    rows: Vec<SpeedupRow>,
}

#[derive(Serialize)]
struct Summary {
    experiment: Experiment,
    seeds: Vec<u64>,
    jobs: Vec<Job>,
    results: Vec<JobSummary>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    speedup: Vec<SpeedupTable>,
}

fn band(b: &Option<Band>, prec: usize) -> String {
    match b {
        Some(b) => format!("{:.p$e} [{:.p$e}, {:.p$e}]", b.median, b.lo, b.hi, p = prec),
        None => "-".into(),
    }
}

fn print_table(exp: Experiment, results: &[JobSummary], speedup: &[SpeedupTable]) {
    match exp {
        Experiment::PolicyEval => {
            println!(
                "{:<10} {:>4} {:>8} {:>14} {:>8} {:>36} {:>30}",
                "run", "K", "T", "total xi", "slope", "slope median [12.5%, 87.5%]", "final mse"
            );
            for r in results {
                let slope = r.mse_slope.map(|b| format!("{:.3} [{:.3}, {:.3}]", b.median, b.lo, b.hi));
                println!(
                    "{:<10} {:>4} {:>8} {:>14} {:>8} {:>36} {:>30}",
                    r.label,
                    r.k,
                    r.t_total,
                    r.samples_total.map(|s| s.to_string()).unwrap_or_default(),
                    r.mse_slope_mean.map(|m| format!("{m:.3}")).unwrap_or_else(|| "-".into()),
                    slope.unwrap_or_else(|| "-".into()),
                    band(&r.final_mse, 2)
                );
            }
        }
        Experiment::Hyperopt => {
            println!("{:<10} {:>4} {:>8} {:>14} {:>36} {:>36}", "run", "K", "T", "total xi", "final objective", "best objective");
            for r in results {
                println!(
                    "{:<10} {:>4} {:>8} {:>14} {:>36} {:>36}",
                    r.label,
                    r.k,
                    r.t_total,
                    r.samples_total.map(|s| s.to_string()).unwrap_or_default(),
                    band(&r.final_objective, 4),
                    band(&r.best_objective, 4)
                );
            }
        }
        Experiment::Speedup => {
            println!("{:>10} {:>4} {:>9} {:>36} {:>36}", "eps", "K", "censored", "total xi to eps", "per-agent xi to eps");
            for table in speedup {
                for r in &table.rows {
                    println!(
                        "{:>10.1e} {:>4} {:>9} {:>36} {:>36}",
                        table.eps,
                        r.k,
                        format!("{}/{}", r.censored, r.runs),
                        band(&r.total, 3),
                        band(&r.per_agent, 3)
                    );
                }
            }
        }
    }
}

pub fn cmd_replicate(g: &Global, exp: Experiment, ks: &[usize]) -> CmdResult {
    let base = apply_overrides(exp.base(), &g.set)?;
    let ks = if ks.is_empty() { exp.default_ks() } else { ks.to_vec() };
    if ks.contains(&0) {
        return Err(Failure::usage(anyhow::anyhow!("network sizes must be positive")));
    }
    let jobs = jobs(exp, &base, &ks)?;
    let seeds: Vec<u64> = (0..g.seeds.unwrap_or(DEFAULT_SEEDS).max(1)).map(|i| base.seed.wrapping_add(i)).collect();
    let dir = g.out.join(exp.name());
    log::info!("{}: {} configurations x {} seeds", exp.name(), jobs.len(), seeds.len());

    let work: Vec<(usize, RunConfig)> = jobs
        .iter()
        .enumerate()
        .flat_map(|(j, job)| seeds.iter().map(move |&seed| (j, RunConfig { seed, ..job.config.clone() })))
        .collect();
    let results: Vec<_> = work.par_iter().map(|(_, cfg)| dsbo_core::harness::run(cfg)).collect();

    let mut statuses = Vec::with_capacity(work.len());
    let mut per_job: Vec<(Vec<&Trace>, usize)> = vec![(Vec::new(), 0); jobs.len()];
    for ((j, cfg), result) in work.iter().zip(&results) {
        if let Some(trace) = trace_of(result) {
            write_trace(trace, &dir.join(format!("{}-seed{}.csv", jobs[*j].label, cfg.seed)))?;
        }
        statuses.push(Status::of(result));
        match result {
            Ok(trace) => per_job[*j].0.push(trace),
            Err(e) => {
                log::error!("{} seed {}: {e}", jobs[*j].label, cfg.seed);
                per_job[*j].1 += 1;
            }
        }
    }

    let summaries: Vec<JobSummary> =
        jobs.iter().zip(&per_job).map(|(job, (traces, failed))| summarize(job, traces, *failed)).collect();
    let speedup = if exp == Experiment::Speedup {
        let groups: Vec<(usize, Vec<Vec<_>>)> = jobs
            .iter()
            .zip(&per_job)
            .map(|(job, (traces, _))| (job.config.topology.k, traces.iter().map(|t| t.records.clone()).collect()))
            .collect();
        SPEEDUP_EPS.iter().map(|&eps| SpeedupTable { eps, rows: speedup_analysis(&groups, eps) }).collect()
    } else {
        Vec::new()
    };
    if !g.quiet {
        print_table(exp, &summaries, &speedup);
    }
    write_json(
        &Summary { experiment: exp, seeds, jobs, results: summaries, speedup },
        &dir.join("summary.json"),
    )?;
    batch_outcome(&statuses)
}
