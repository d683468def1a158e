//! `dsbo`: run, sweep, validate and replicate simulator experiments.

mod common;
mod plotdata;
mod replicate;
mod run;
mod sweep;
mod validate;

use clap::{Args, Parser, Subcommand};
use common::Failure;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser, Debug)]
#[command(name = "dsbo", version, about = "Decentralized stochastic bilevel optimization simulator")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Global {
    /// JSON run configuration
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Override a config value by dotted path; repeatable
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Directory for traces and summaries
    #[arg(long, global = true, value_name = "DIR", default_value = "out")]
    pub out: PathBuf,
    /// Number of seeds, counted up from the config seed
    #[arg(long, global = true, value_name = "N")]
    pub seeds: Option<u64>,
    /// Only print errors
    #[arg(long, short, global = true)]
    pub quiet: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Execute one configuration and write its trace
    Run,
    /// Run the Cartesian product of `--vary` lists
    Sweep {
        /// `KEY=V1,V2,...`; repeatable
        #[arg(long, value_name = "KEY=V1,V2,...", required = true)]
        vary: Vec<String>,
    },
    /// Check a configuration without running it
    Validate {
        /// Hessian draws inspected by the spectral check
        #[arg(long, default_value_t = 100)]
        hessian_draws: usize,
        /// Oracle draws used by the unbiasedness check
        #[arg(long, default_value_t = 1000)]
        oracle_draws: usize,
    },
    /// Merge traces into long-format CSV for plotting
    Plotdata {
        #[arg(required = true, value_name = "TRACE")]
        traces: Vec<PathBuf>,
        /// Comma-separated trace columns
        #[arg(long, value_delimiter = ',', required = true)]
        fields: Vec<String>,
        /// Write here instead of stdout
        #[arg(long, short, value_name = "FILE")]
        output: Option<PathBuf>,
    },
    /// Re-run one of the reference experiments
    Replicate {
        experiment: replicate::Experiment,
        /// Network sizes to use instead of the experiment's defaults
        #[arg(long, value_delimiter = ',', value_name = "K,...")]
        ks: Vec<usize>,
    },
}

fn threads_from_env() -> Result<(), Failure> {
    let Ok(raw) = std::env::var("DSBO_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Failure::usage(anyhow::anyhow!("DSBO_THREADS must be a positive integer, got `{raw}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Failure::usage(anyhow::anyhow!("cannot size the thread pool: {e}")))
}

fn dispatch(cli: Cli) -> Result<(), Failure> {
    threads_from_env()?;
    let g = &cli.global;
    match cli.command {
        Command::Run => run::cmd_run(g),
        Command::Sweep { vary } => sweep::cmd_sweep(g, &vary),
        Command::Validate { hessian_draws, oracle_draws } => validate::cmd_validate(g, hessian_draws, oracle_draws),
        Command::Plotdata { traces, fields, output } => plotdata::cmd_plotdata(g, &traces, &fields, output.as_deref()),
        Command::Replicate { experiment, ks } => replicate::cmd_replicate(g, experiment, &ks),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.global.quiet { "error" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}
