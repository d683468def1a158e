use thiserror::Error;

/// Errors raised by topology construction and validation.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum TopologyError {
    #[error("invalid topology: {0}")]
    InvalidTopology(String),
    #[error("mixing matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },
    #[error("negative entry {value} at ({row}, {col})")]
    NegativeEntry { row: usize, col: usize, value: f64 },
    #[error("mixing matrix is not symmetric: w[{row}][{col}] = {a} but w[{col}][{row}] = {b}")]
    NotSymmetric { row: usize, col: usize, a: f64, b: f64 },
    #[error("mixing matrix is not doubly stochastic: {axis} {index} sums to {sum}")]
    NotDoublyStochastic { axis: &'static str, index: usize, sum: f64 },
    #[error("topology declared connected but rho = {rho} >= 1")]
    Disconnected { rho: f64 },
    #[error(
        "power iteration did not converge in {iterations} steps (estimate {estimate}, residual {residual:e})"
    )]
    PowerIteration { iterations: usize, estimate: f64, residual: f64 },
    #[error("shape mismatch in gossip input: agent {agent} has shape {found:?}, expected {expected:?}")]
    ShapeMismatch { agent: usize, expected: (usize, usize), found: (usize, usize) },
    #[error("expected one value per agent ({expected}), got {found}")]
    AgentCount { expected: usize, found: usize },
}

/// Errors raised when building a problem family or ingesting data.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProblemError {
    #[error("invalid problem constants: {0}")]
    InvalidConstants(String),
    #[error("invalid problem parameter: {0}")]
    InvalidParameter(String),
    #[error("agent {agent} has an empty {part} partition")]
    EmptyPartition { agent: usize, part: &'static str },
    #[error("feature dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("cannot split {size} points across {k} agents")]
    TooManyAgents { k: usize, size: usize },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("{0} is not a compositional problem")]
    NotCompositional(String),
    #[error("io error: {0}")]
    Io(String),
}

/// Errors raised while stepping an algorithm.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum AlgorithmError {
    #[error("step-size schedule exhausted: t = {t} but T = {t_total}")]
    ScheduleExhausted { t: usize, t_total: usize },
    #[error("divergence at round {t}: agent {agent} has a non-finite {iterate}")]
    Divergence { t: usize, agent: usize, iterate: &'static str },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error(transparent)]
    Problem(#[from] ProblemError),
}

/// Step-size schedule validation failures. The message names the bound.
#[derive(Debug, Error, Clone, PartialEq)]
#[error("invalid schedule: {0}")]
pub struct ScheduleError(pub String);
