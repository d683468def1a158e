//! Experiment orchestration: configuration, execution, traces, analysis.

pub mod analysis;
pub mod config;
pub mod run;
pub mod trace;

pub use analysis::{
    loglog_slope, mean_grad_norm, median, quantile, samples_to_eps, speedup_analysis, AnalysisError, Band, Hit,
    SpeedupRow, DEFAULT_SLOPE_WINDOW,
};
pub use config::{Algorithm, ProblemConfig, RunConfig, TopologyConfig, TopologyKind};
pub use run::{consensus_error, measure, run, run_instance, run_with_threads, EstimatorView, Instance, RunError, View};
pub use trace::{Reference, Trace, TraceHeader, TraceIoError, TraceRecord, FIELDS};
