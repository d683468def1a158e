//! Fixtures shared by the criterion benchmarks in `benches/`.

use dsbo_core::problems::{Quadratic, QuadraticParams};
use dsbo_core::{build_ring, init_agents, make_schedule, AgentState, MixingMatrix, ScheduleConfig, StepSchedule};

pub struct RoundFixture {
    pub problem: Quadratic,
    pub mixing: MixingMatrix,
    pub schedule: StepSchedule,
    pub states: Vec<AgentState>,
}

/// A ring of `k` agents on a quadratic with `dim`-dimensional levels, with
/// `b` Hessian draws per round.
pub fn round_fixture(k: usize, dim: usize, b: usize) -> RoundFixture {
    let params = QuadraticParams { d_x: dim, d_y: dim, ..QuadraticParams::default() };
    let problem = Quadratic::new(k, &params).expect("valid quadratic");
    let mixing = build_ring(k).expect("valid ring");
    let schedule = make_schedule(&ScheduleConfig::Diminishing { c1: 10.0, mu: 1.0 }, k, 1000).expect("valid schedule");
    let states = init_agents(&problem, k, b).expect("valid state");
    RoundFixture { problem, mixing, schedule, states }
}
