//! Exit codes, config loading and trace output shared by the subcommands.

use crate::Global;
use anyhow::{anyhow, Context};
use dsbo_core::harness::{RunConfig, RunError, Trace};
use serde::Serialize;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

pub const EXIT_USAGE: u8 = 2;
pub const EXIT_CONFIG: u8 = 3;
pub const EXIT_DIVERGENCE: u8 = 4;

/// An error together with the process exit code it maps to.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub error: anyhow::Error,
}

impl Failure {
    pub fn usage(error: impl Into<anyhow::Error>) -> Self {
        Self { code: EXIT_USAGE, error: error.into() }
    }

    pub fn config(error: impl Into<anyhow::Error>) -> Self {
        Self { code: EXIT_CONFIG, error: error.into() }
    }

    pub fn from_run(error: RunError) -> Self {
        let code = if error.is_divergence() { EXIT_DIVERGENCE } else { EXIT_CONFIG };
        // the message already embeds its source
        Self { code, error: anyhow!(error.to_string()) }
    }
}

pub type CmdResult<T = ()> = Result<T, Failure>;

/// Outcome of one run inside a batch, as recorded in summaries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Status {
    Ok,
    ConfigError,
    Divergence,
}

impl Status {
    pub fn of(result: &Result<Trace, RunError>) -> Self {
        match result {
            Ok(_) => Status::Ok,
            Err(e) if e.is_divergence() => Status::Divergence,
            Err(_) => Status::ConfigError,
        }
    }
}

/// Exit status for a batch: configuration problems outrank divergence.
pub fn batch_outcome(statuses: &[Status]) -> CmdResult {
    let failed = |s: Status| statuses.iter().filter(|&&x| x == s).count();
    match (failed(Status::ConfigError), failed(Status::Divergence)) {
        (0, 0) => Ok(()),
        (0, d) => Err(Failure { code: EXIT_DIVERGENCE, error: anyhow!("{d} of {} runs diverged", statuses.len()) }),
        (c, _) => Err(Failure::config(anyhow!("{c} of {} runs had invalid configurations", statuses.len()))),
    }
}

pub fn read_config(path: &Path) -> CmdResult<RunConfig> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read config {}", path.display()))
        .map_err(Failure::usage)?;
    RunConfig::from_json(&text)
        .with_context(|| format!("{} does not match the config schema", path.display()))
        .map_err(Failure::config)
}

/// The `--config` file with every `--set` override applied.
pub fn resolved_config(g: &Global) -> CmdResult<RunConfig> {
    let path = g.config.as_deref().ok_or_else(|| Failure::usage(anyhow!("--config is required")))?;
    apply_overrides(read_config(path)?, &g.set)
}

pub fn apply_overrides(cfg: RunConfig, overrides: &[String]) -> CmdResult<RunConfig> {
    cfg.with_overrides(overrides).map_err(|e| Failure::config(anyhow!(e)))
}

/// `seeds` consecutive seeds starting at the config's own.
pub fn seed_list(cfg: &RunConfig, seeds: Option<u64>) -> Vec<u64> {
    (0..seeds.unwrap_or(1).max(1)).map(|i| cfg.seed.wrapping_add(i)).collect()
}

pub fn trace_file_name(cfg: &RunConfig) -> String {
    format!("{}-{}-k{}-seed{}.csv", cfg.algorithm.name(), cfg.problem.family(), cfg.topology.k, cfg.seed)
}

pub fn write_trace(trace: &Trace, path: &Path) -> CmdResult {
    create_parent(path)?;
    let file = File::create(path)
        .with_context(|| format!("cannot create {}", path.display()))
        .map_err(Failure::usage)?;
    trace
        .write_csv(BufWriter::new(file))
        .with_context(|| format!("cannot write {}", path.display()))
        .map_err(Failure::usage)
}

pub fn read_trace(path: &Path) -> CmdResult<Trace> {
    let file = File::open(path)
        .with_context(|| format!("cannot open trace {}", path.display()))
        .map_err(Failure::usage)?;
    Trace::read_csv(BufReader::new(file))
        .with_context(|| format!("{} is not a trace file", path.display()))
        .map_err(Failure::usage)
}

pub fn write_json<T: Serialize>(value: &T, path: &Path) -> CmdResult {
    create_parent(path)?;
    let text = serde_json::to_string_pretty(value).map_err(Failure::usage)?;
    let mut file = File::create(path)
        .with_context(|| format!("cannot create {}", path.display()))
        .map_err(Failure::usage)?;
    writeln!(file, "{text}").map_err(Failure::usage)
}

fn create_parent(path: &Path) -> CmdResult {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => std::fs::create_dir_all(dir)
            .with_context(|| format!("cannot create {}", dir.display()))
            .map_err(Failure::usage),
        _ => Ok(()),
    }
}

/// Trace written by a run, or the partial trace a failed run left behind.
pub fn trace_of(result: &Result<Trace, RunError>) -> Option<&Trace> {
    match result {
        Ok(t) => Some(t),
        Err(RunError::Algorithm { partial, .. }) => Some(partial),
        Err(RunError::Config(_)) => None,
    }
}

/// Short description of a trace's last record for progress output.
pub fn final_summary(trace: &Trace) -> String {
    let Some(r) = trace.final_record() else {
        return "no records".into();
    };
    let mut s = format!("t={} objective={:.6e} grad_norm_sq={:.3e}", r.t, r.objective, r.grad_norm_sq);
    if let Some(m) = r.mse {
        s.push_str(&format!(" mse={m:.3e}"));
    }
    s
}
