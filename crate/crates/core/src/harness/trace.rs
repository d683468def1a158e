//! Trace records and their CSV form.
//!
//! A trace file starts with one `# {json}` line holding the resolved config
//! and the reference values, followed by an ordinary CSV table with one
//! column per [`TraceRecord`] field. Missing optional values are empty
//! cells.

use super::config::RunConfig;
use serde::{Deserialize, Serialize};
use std::io::{BufRead, Write};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub t: usize,
    /// `‖∇F(x̄_t)‖²`
    pub grad_norm_sq: f64,
    /// `F(x̄_t)`
    pub objective: f64,
    /// `F(x̄_t) − F*`
    pub subopt: Option<f64>,
    /// `‖x̄_t − x*‖²`
    pub mse: Option<f64>,
    /// `Σ_k ‖x_t^k − x̄_t‖²`
    pub consensus_x: f64,
    pub consensus_y: f64,
    /// `‖s̄_t − ∇x f(x̄_t, y*(x̄_t))‖²`
    pub est_err_s: Option<f64>,
    pub est_err_h: Option<f64>,
    pub est_err_u: Option<f64>,
    pub est_err_v: Option<f64>,
    /// `‖ȳ_t − y*(x̄_t)‖²`
    pub inner_err: f64,
    /// cumulative per-agent outer-level samples
    pub samples_zeta: u64,
    /// cumulative per-agent inner-level samples
    pub samples_xi: u64,
}

/// Column names in file order.
pub const FIELDS: [&str; 14] = [
    "t",
    "grad_norm_sq",
    "objective",
    "subopt",
    "mse",
    "consensus_x",
    "consensus_y",
    "est_err_s",
    "est_err_h",
    "est_err_u",
    "est_err_v",
    "inner_err",
    "samples_zeta",
    "samples_xi",
];

impl TraceRecord {
    /// Numeric value of a named column, `None` when absent or unknown.
    pub fn get(&self, field: &str) -> Option<f64> {
        match field {
            "t" => Some(self.t as f64),
            "grad_norm_sq" => Some(self.grad_norm_sq),
            "objective" => Some(self.objective),
            "subopt" => self.subopt,
            "mse" => self.mse,
            "consensus_x" => Some(self.consensus_x),
            "consensus_y" => Some(self.consensus_y),
            "est_err_s" => self.est_err_s,
            "est_err_h" => self.est_err_h,
            "est_err_u" => self.est_err_u,
            "est_err_v" => self.est_err_v,
            "inner_err" => Some(self.inner_err),
            "samples_zeta" => Some(self.samples_zeta as f64),
            "samples_xi" => Some(self.samples_xi as f64),
            _ => None,
        }
    }

    fn cells(&self) -> [String; 14] {
        let opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
        [
            self.t.to_string(),
            self.grad_norm_sq.to_string(),
            self.objective.to_string(),
            opt(self.subopt),
            opt(self.mse),
            self.consensus_x.to_string(),
            self.consensus_y.to_string(),
            opt(self.est_err_s),
            opt(self.est_err_h),
            opt(self.est_err_u),
            opt(self.est_err_v),
            self.inner_err.to_string(),
            self.samples_zeta.to_string(),
            self.samples_xi.to_string(),
        ]
    }
}

/// Reference solution carried in the header.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reference {
    pub x_star: Option<Vec<f64>>,
    pub f_star: Option<f64>,
    /// `true` when the reference comes from a numerical solver
    pub numerical: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceHeader {
    pub config: RunConfig,
    pub reference: Reference,
    pub rho: f64,
    pub b: usize,
    pub cadence: usize,
    pub problem: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub header: TraceHeader,
    pub records: Vec<TraceRecord>,
}

#[derive(Debug, thiserror::Error)]
pub enum TraceIoError {
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("trace header: {0}")]
    Header(String),
    #[error("trace table: {0}")]
    Table(#[from] csv::Error),
}

impl Trace {
    pub fn final_record(&self) -> Option<&TraceRecord> {
        self.records.last()
    }

    /// Values of one column over the whole trace.
    pub fn column(&self, field: &str) -> Option<Vec<(usize, f64)>> {
        self.records.iter().map(|r| r.get(field).map(|v| (r.t, v))).collect()
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<(), TraceIoError> {
        let header = serde_json::to_string(&self.header).map_err(|e| TraceIoError::Header(e.to_string()))?;
        writeln!(out, "# {header}")?;
        let mut w = csv::Writer::from_writer(out);
        w.write_record(FIELDS)?;
        for r in &self.records {
            w.write_record(r.cells())?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("utf-8 output")
    }

    pub fn read_csv<R: BufRead>(mut input: R) -> Result<Self, TraceIoError> {
        let mut first = String::new();
        input.read_line(&mut first)?;
        let json = first
            .trim_end()
            .strip_prefix("# ")
            .ok_or_else(|| TraceIoError::Header("first line must be `# {json}`".into()))?;
        let header: TraceHeader = serde_json::from_str(json).map_err(|e| TraceIoError::Header(e.to_string()))?;
        let mut rdr = csv::Reader::from_reader(input);
        let cols = rdr.headers()?.clone();
        if cols.iter().ne(FIELDS.iter().copied()) {
            return Err(TraceIoError::Header(format!("unexpected columns {cols:?}")));
        }
        let mut records = Vec::new();
        for row in rdr.records() {
            let row = row?;
            let num = |i: usize| -> Result<f64, TraceIoError> {
                row[i].parse().map_err(|_| TraceIoError::Header(format!("bad value `{}` in {}", &row[i], FIELDS[i])))
            };
            let opt = |i: usize| -> Result<Option<f64>, TraceIoError> {
                if row[i].is_empty() {
                    Ok(None)
                } else {
                    num(i).map(Some)
                }
            };
            let int = |i: usize| -> Result<u64, TraceIoError> {
                row[i].parse().map_err(|_| TraceIoError::Header(format!("bad integer `{}` in {}", &row[i], FIELDS[i])))
            };
            records.push(TraceRecord {
                t: int(0)? as usize,
                grad_norm_sq: num(1)?,
                objective: num(2)?,
                subopt: opt(3)?,
                mse: opt(4)?,
                consensus_x: num(5)?,
                consensus_y: num(6)?,
                est_err_s: opt(7)?,
                est_err_h: opt(8)?,
                est_err_u: opt(9)?,
                est_err_v: opt(10)?,
                inner_err: num(11)?,
                samples_zeta: int(12)?,
                samples_xi: int(13)?,
            });
        }
        Ok(Trace { header, records })
    }
}
