//! Long-format export: one row per (run, t, field) with cross-run quantiles
//! at each `t`.

use crate::common::{read_trace, CmdResult, Failure};
use crate::Global;
use anyhow::{anyhow, Context};
use dsbo_core::harness::{quantile, Trace};
use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

pub struct Row {
    pub run_id: String,
    pub t: usize,
    pub field: String,
    pub value: f64,
    pub q125: f64,
    pub q50: f64,
    pub q875: f64,
}

fn run_ids(paths: &[PathBuf]) -> Vec<String> {
    let stems: Vec<String> =
        paths.iter().map(|p| p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()).collect();
    let unique = stems.iter().all(|s| !s.is_empty() && stems.iter().filter(|o| *o == s).count() == 1);
    if unique {
        stems
    } else {
        paths.iter().map(|p| p.display().to_string()).collect()
    }
}

/// Merge `traces` on the coarsest cadence among them. Records off that grid
/// are dropped, except each trace's final record.
pub fn long_rows(traces: &[(String, Trace)], fields: &[String]) -> Result<Vec<Row>, String> {
    let coarsest = traces.iter().map(|(_, t)| t.header.cadence.max(1)).max().unwrap_or(1);
    if traces.iter().any(|(_, t)| t.header.cadence.max(1) != coarsest) {
        log::warn!("traces have different cadences; resampling all to every {coarsest} rounds");
    }
    let mut columns: Vec<Vec<Vec<(usize, f64)>>> = Vec::with_capacity(traces.len());
    for (id, trace) in traces {
        let last_t = trace.final_record().map(|r| r.t);
        let mut per_field = Vec::with_capacity(fields.len());
        for f in fields {
            let col = trace.column(f).ok_or_else(|| format!("field `{f}` is absent from trace {id}"))?;
            per_field.push(col.into_iter().filter(|&(t, _)| t % coarsest == 0 || Some(t) == last_t).collect());
        }
        columns.push(per_field);
    }

    let mut pooled: BTreeMap<(usize, usize), Vec<f64>> = BTreeMap::new();
    for per_field in &columns {
        for (fi, col) in per_field.iter().enumerate() {
            for &(t, v) in col {
                pooled.entry((fi, t)).or_default().push(v);
            }
        }
    }
    let bands: BTreeMap<(usize, usize), [f64; 3]> = pooled
        .into_iter()
        .map(|(key, mut v)| {
            v.sort_by(f64::total_cmp);
            let q = |p| quantile(&v, p).expect("nonempty");
            (key, [q(0.125), q(0.5), q(0.875)])
        })
        .collect();

    let mut rows = Vec::new();
    for ((id, _), per_field) in traces.iter().zip(&columns) {
        for (fi, col) in per_field.iter().enumerate() {
            for &(t, value) in col {
                let [q125, q50, q875] = bands[&(fi, t)];
                rows.push(Row { run_id: id.clone(), t, field: fields[fi].clone(), value, q125, q50, q875 });
            }
        }
    }
    Ok(rows)
}

pub fn write_rows<W: Write>(rows: &[Row], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["run_id", "t", "field", "value", "q125", "q50", "q875"])?;
    for r in rows {
        w.write_record([
            r.run_id.clone(),
            r.t.to_string(),
            r.field.clone(),
            r.value.to_string(),
            r.q125.to_string(),
            r.q50.to_string(),
            r.q875.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn cmd_plotdata(_g: &Global, paths: &[PathBuf], fields: &[String], output: Option<&Path>) -> CmdResult {
    let ids = run_ids(paths);
    let traces: Vec<(String, Trace)> =
        paths.iter().zip(ids).map(|(p, id)| read_trace(p).map(|t| (id, t))).collect::<Result<_, _>>()?;
    let rows = long_rows(&traces, fields).map_err(|e| Failure::usage(anyhow!(e)))?;
    let written = match output {
        Some(path) => {
            let file = std::fs::File::create(path)
                .with_context(|| format!("cannot create {}", path.display()))
                .map_err(Failure::usage)?;
            write_rows(&rows, std::io::BufWriter::new(file))
        }
        None => write_rows(&rows, std::io::stdout().lock()),
    };
    match written {
        // a closed downstream pipe (`| head`) is not an error
        Err(e) if matches!(e.kind(), csv::ErrorKind::Io(io) if io.kind() == std::io::ErrorKind::BrokenPipe) => Ok(()),
        other => other.context("writing plot data").map_err(Failure::usage),
    }
}
