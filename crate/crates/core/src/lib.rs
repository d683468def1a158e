//! Decentralized stochastic bilevel optimization over gossip networks.

pub mod baselines;
pub mod dsbo;
pub mod error;
pub mod harness;
pub mod linalg;
pub mod problems;
pub mod rng;
pub mod schedule;
pub mod topology;

pub use baselines::{
    dbsa_run, dbsa_step, dsgd_run, dsgd_step, fedsbo_round, CentralState, DbsaOptions, DsgdOptions, InnerStep,
    LocalIterate, StarContext,
};
pub use dsbo::{default_b, dsbo_round, init_agents, neumann_chain, AgentState, RoundContext};
pub use error::{AlgorithmError, ProblemError, ScheduleError, TopologyError};
pub use linalg::{Matrix, Vector};
pub use problems::{BilevelProblem, CompositionalProblem, ProblemConstants, StochasticSample};
pub use schedule::{make_schedule, ScheduleConfig, StepSchedule};
pub use topology::{build_complete, build_custom, build_ring, gossip_mix, spectral_gap, MixingMatrix};
