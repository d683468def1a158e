use crate::common::{
    batch_outcome, final_summary, resolved_config, seed_list, trace_file_name, trace_of, write_trace, CmdResult,
    Failure, Status,
};
use crate::Global;
use dsbo_core::harness::{run, RunConfig};
use rayon::prelude::*;
use std::path::PathBuf;

pub fn cmd_run(g: &Global) -> CmdResult {
    let base = resolved_config(g)?;
    let seeds = seed_list(&base, g.seeds);
    let single = seeds.len() == 1;
    let jobs: Vec<RunConfig> = seeds.into_iter().map(|seed| RunConfig { seed, ..base.clone() }).collect();
    let results: Vec<_> = jobs.par_iter().map(run).collect();

    let mut statuses = Vec::with_capacity(jobs.len());
    for (cfg, result) in jobs.iter().zip(results) {
        let path = match (&cfg.output, single) {
            (Some(p), true) => PathBuf::from(p),
            _ => g.out.join(trace_file_name(cfg)),
        };
        let status = Status::of(&result);
        let wrote = match trace_of(&result) {
            Some(trace) => {
                write_trace(trace, &path)?;
                true
            }
            None => false,
        };
        match result {
            Ok(trace) => {
                if !g.quiet {
                    println!("{}: {}", path.display(), final_summary(&trace));
                }
                statuses.push(status);
            }
            Err(e) => {
                if wrote {
                    log::info!("partial trace written to {}", path.display());
                }
                if single {
                    return Err(Failure::from_run(e));
                }
                log::error!("seed {}: {e}", cfg.seed);
                statuses.push(status);
            }
        }
    }
    batch_outcome(&statuses)
}
