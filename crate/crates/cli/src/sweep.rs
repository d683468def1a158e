use crate::common::{
    apply_overrides, batch_outcome, resolved_config, seed_list, trace_of, write_json, write_trace, CmdResult, Failure,
    Status,
};
use crate::Global;
use anyhow::anyhow;
use dsbo_core::harness::{run, RunConfig, TraceRecord};
use rayon::prelude::*;
use serde::Serialize;

/// One `--vary key=v1,v2,...` axis.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Axis {
    pub key: String,
    pub values: Vec<String>,
}

pub fn parse_axis(spec: &str) -> Result<Axis, String> {
    let (key, list) = spec.split_once('=').ok_or_else(|| format!("`{spec}` is not of the form key=v1,v2,..."))?;
    let values: Vec<String> = list.split(',').map(|v| v.trim().to_string()).filter(|v| !v.is_empty()).collect();
    if key.trim().is_empty() || values.is_empty() {
        return Err(format!("`{spec}` needs a key and at least one value"));
    }
    Ok(Axis { key: key.trim().to_string(), values })
}

/// Every combination of one value per axis, as override strings.
pub fn cartesian(axes: &[Axis]) -> Vec<Vec<String>> {
    axes.iter().fold(vec![Vec::new()], |acc, axis| {
        acc.iter()
            .flat_map(|prefix| {
                axis.values.iter().map(move |v| {
                    let mut next = prefix.clone();
                    next.push(format!("{}={v}", axis.key));
                    next
                })
            })
            .collect()
    })
}

#[derive(Serialize)]
struct SweepRun {
    index: usize,
    overrides: Vec<String>,
    seed: u64,
    file: Option<String>,
    status: Status,
    message: Option<String>,
    last: Option<TraceRecord>,
}

#[derive(Serialize)]
struct SweepSummary {
    base: RunConfig,
    axes: Vec<Axis>,
    runs: Vec<SweepRun>,
}

pub fn cmd_sweep(g: &Global, vary: &[String]) -> CmdResult {
    let base = resolved_config(g)?;
    let axes: Vec<Axis> =
        vary.iter().map(|s| parse_axis(s)).collect::<Result<_, _>>().map_err(|e| Failure::usage(anyhow!(e)))?;
    let combos = cartesian(&axes);

    // schema errors abort before anything runs
    let mut jobs = Vec::new();
    for (index, combo) in combos.iter().enumerate() {
        let cfg = apply_overrides(base.clone(), combo)?;
        for seed in seed_list(&cfg, g.seeds) {
            jobs.push((index, combo.clone(), RunConfig { seed, output: None, ..cfg.clone() }));
        }
    }
    log::info!("sweep: {} combinations, {} runs", combos.len(), jobs.len());

    let results: Vec<_> = jobs.par_iter().map(|(_, _, cfg)| run(cfg)).collect();
    let mut runs = Vec::with_capacity(jobs.len());
    for ((index, overrides, cfg), result) in jobs.into_iter().zip(results) {
        let name = format!("sweep-{index:03}-seed{}.csv", cfg.seed);
        let file = match trace_of(&result) {
            Some(trace) => {
                write_trace(trace, &g.out.join(&name))?;
                Some(name)
            }
            None => None,
        };
        let status = Status::of(&result);
        let (last, message) = match &result {
            Ok(t) => (t.final_record().cloned(), None),
            Err(e) => (trace_of(&result).and_then(|t| t.final_record().cloned()), Some(e.to_string())),
        };
        if let Some(m) = &message {
            log::error!("{} seed {}: {m}", overrides.join(" "), cfg.seed);
        } else if !g.quiet {
            println!("[{index:03}] {} seed {}: ok", overrides.join(" "), cfg.seed);
        }
        runs.push(SweepRun { index, overrides, seed: cfg.seed, file, status, message, last });
    }
    let statuses: Vec<Status> = runs.iter().map(|r| r.status).collect();
    write_json(&SweepSummary { base, axes, runs }, &g.out.join("summary.json"))?;
    batch_outcome(&statuses)
}
