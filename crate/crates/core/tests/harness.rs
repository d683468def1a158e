use dsbo_core::harness::{run, Algorithm, ProblemConfig, RunConfig, RunError, TopologyConfig, Trace};
use dsbo_core::problems::{PolicyEvalParams, QuadraticNoise, QuadraticParams};
use dsbo_core::{AlgorithmError, DbsaOptions, DsgdOptions, ScheduleConfig};

fn config(algorithm: Algorithm, problem: ProblemConfig, topology: TopologyConfig, t_total: usize) -> RunConfig {
    RunConfig {
        algorithm,
        problem,
        topology,
        t_total,
        schedule: ScheduleConfig::Diminishing { c1: 10.0, mu: 1.0 },
        b: None,
        seed: 1,
        cadence: None,
        mean_grad_norm: false,
        output: None,
        dbsa: DbsaOptions::default(),
        dsgd: DsgdOptions::default(),
    }
}

fn quadratic(noise: QuadraticNoise, heterogeneity: f64) -> ProblemConfig {
    ProblemConfig::Quadratic(QuadraticParams { noise, heterogeneity, seed: 5, ..Default::default() })
}

fn policy(n_states: usize) -> ProblemConfig {
    ProblemConfig::PolicyEval(PolicyEvalParams { n_states, ..Default::default() })
}

#[test]
fn single_agent_noiseless_quadratic_converges() {
    let mut c = config(Algorithm::Dsbo, quadratic(QuadraticNoise::zero(), 1.0), TopologyConfig::complete(1), 5000);
    c.schedule = ScheduleConfig::Diminishing { c1: 20.0, mu: 1.0 };
    let trace = run(&c).unwrap();
    let last = trace.final_record().unwrap();
    assert_eq!(last.t, 5000);
    assert!(last.mse.unwrap() < 1e-6, "{:?}", last);
}

#[test]
fn identical_agents_on_complete_graph_stay_in_consensus() {
    let c = config(Algorithm::Dsbo, quadratic(QuadraticNoise::zero(), 0.0), TopologyConfig::complete(4), 200);
    let trace = run(&c).unwrap();
    assert!(trace.records.iter().all(|r| r.consensus_x <= 1e-20 && r.consensus_y <= 1e-20));
}

#[test]
fn repeated_runs_give_identical_bytes_and_reload() {
    let c = config(Algorithm::Dsbo, policy(15), TopologyConfig::ring(4), 150);
    let a = run(&c).unwrap().to_csv_string();
    let b = run(&c).unwrap().to_csv_string();
    assert_eq!(a, b);
    let back = Trace::read_csv(a.as_bytes()).unwrap();
    assert_eq!(back.to_csv_string(), a);
    // the header alone is enough to reproduce the run
    let again = run(&back.header.config).unwrap().to_csv_string();
    assert_eq!(again, a);
}

#[test]
fn records_follow_cadence_and_end_at_horizon() {
    let mut c = config(Algorithm::Dsbo, policy(10), TopologyConfig::ring(3), 103);
    c.cadence = Some(10);
    let trace = run(&c).unwrap();
    let ts: Vec<usize> = trace.records.iter().map(|r| r.t).collect();
    assert_eq!(ts, vec![0, 10, 20, 30, 40, 50, 60, 70, 80, 90, 100, 103]);
    assert!(ts.windows(2).all(|w| w[0] < w[1]));
}

#[test]
fn sample_counters_match_closed_forms() {
    let t_total = 40u64;
    let mut c = config(Algorithm::Dsbo, policy(10), TopologyConfig::ring(3), t_total as usize);
    c.b = Some(3);
    for r in run(&c).unwrap().records {
        assert_eq!(r.samples_zeta, r.t as u64);
        assert_eq!(r.samples_xi, 4 * r.t as u64);
    }
    let fed = RunConfig { algorithm: Algorithm::Fedsbo, ..c.clone() };
    assert_eq!(run(&fed).unwrap().final_record().unwrap().samples_xi, 4 * t_total);

    let dbsa = RunConfig { algorithm: Algorithm::Dbsa, ..c.clone() };
    for r in run(&dbsa).unwrap().records {
        let t = r.t as u64;
        assert_eq!(r.samples_xi, t * t.saturating_sub(1) / 2);
    }
    let dsgd = RunConfig { algorithm: Algorithm::Dsgd, ..c };
    for r in run(&dsgd).unwrap().records {
        let t = r.t as u64;
        assert_eq!(r.samples_xi, t * (t + 1) / 2);
        assert_eq!(r.samples_zeta, t);
    }
}

#[test]
fn estimator_errors_only_for_single_loop_methods() {
    let c = config(Algorithm::Dsbo, policy(10), TopologyConfig::ring(3), 10);
    assert!(run(&c).unwrap().records.iter().all(|r| r.est_err_s.is_some() && r.est_err_v.is_some()));
    let d = RunConfig { algorithm: Algorithm::Dbsa, ..c };
    assert!(run(&d).unwrap().records.iter().all(|r| r.est_err_s.is_none()));
}

#[test]
fn dsgd_on_quadratic_is_a_config_error() {
    let c = config(Algorithm::Dsgd, quadratic(QuadraticNoise::zero(), 1.0), TopologyConfig::ring(3), 10);
    match run(&c) {
        Err(RunError::Config(msg)) => assert!(msg.contains("quadratic"), "{msg}"),
        other => panic!("{other:?}"),
    }
}

#[test]
fn divergence_carries_partial_trace() {
    // α = 2/(μ(C₁+t)) with a tiny μ is far beyond the stability limit
    let mut c = config(Algorithm::Dsbo, quadratic(QuadraticNoise::zero(), 1.0), TopologyConfig::ring(3), 5000);
    c.schedule = ScheduleConfig::Diminishing { c1: 2e4, mu: 1e-4 };
    c.b = Some(2);
    match run(&c) {
        Err(RunError::Algorithm { source: AlgorithmError::Divergence { .. }, partial }) => {
            assert!(!partial.records.is_empty());
            assert!(partial.records.len() < 5001);
        }
        other => panic!("expected divergence, got {:?}", other.map(|t| t.records.len())),
    }
}

#[test]
fn invalid_schedule_is_reported_with_bound() {
    let mut c = config(Algorithm::Dsbo, policy(10), TopologyConfig::ring(3), 10);
    c.schedule = ScheduleConfig::Diminishing { c1: 1.0, mu: 1.0 };
    match run(&c) {
        Err(RunError::Config(msg)) => assert!(msg.contains("max(1, 2/mu)"), "{msg}"),
        other => panic!("{other:?}"),
    }
}

#[test]
fn hyperopt_runs_without_reference_solution() {
    let mut c = config(
        Algorithm::Dsbo,
        ProblemConfig::Hyperopt(dsbo_core::problems::HyperOptParams { n_points: 80, dim: 4, ..Default::default() }),
        TopologyConfig::ring(3),
        50,
    );
    c.schedule = ScheduleConfig::Constant { c0: 0.1, c_beta: 1.0 };
    c.b = Some(5);
    let trace = run(&c).unwrap();
    assert!(trace.header.reference.x_star.is_none());
    assert!(trace.records.iter().all(|r| r.mse.is_none() && r.grad_norm_sq.is_finite()));
}
