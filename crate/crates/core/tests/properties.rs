use dsbo_core::problems::{
    parse_libsvm, PolicyEval, PolicyEvalParams, Quadratic, QuadraticNoise, QuadraticParams,
};
use dsbo_core::topology::{build_custom, gossip_mix_vectors};
use dsbo_core::{
    build_ring, dsbo_round, init_agents, make_schedule, neumann_chain, BilevelProblem, Matrix, MixingMatrix,
    RoundContext, ScheduleConfig, Vector,
};
use nalgebra::SymmetricEigen;
use proptest::prelude::*;

/// Metropolis weights on a random graph with a spanning path, so the
/// result is connected, symmetric and doubly stochastic.
fn metropolis(k: usize, extra_edges: &[(usize, usize)]) -> Matrix {
    let mut adj = vec![vec![false; k]; k];
    for i in 1..k {
        adj[i - 1][i] = true;
        adj[i][i - 1] = true;
    }
    for &(a, b) in extra_edges {
        let (a, b) = (a % k, b % k);
        if a != b {
            adj[a][b] = true;
            adj[b][a] = true;
        }
    }
    let deg: Vec<usize> = adj.iter().map(|r| r.iter().filter(|&&e| e).count()).collect();
    let mut w = Matrix::zeros(k, k);
    for i in 0..k {
        for j in 0..k {
            if adj[i][j] {
                w[(i, j)] = 1.0 / (1 + deg[i].max(deg[j])) as f64;
            }
        }
    }
    for i in 0..k {
        w[(i, i)] = 1.0 - w.row(i).sum();
    }
    w
}

fn eig_rho(w: &Matrix) -> f64 {
    let k = w.nrows();
    SymmetricEigen::new(w - Matrix::from_element(k, k, 1.0 / k as f64)).eigenvalues.amax().powi(2)
}

fn graph() -> impl Strategy<Value = MixingMatrix> {
    (2usize..=12, prop::collection::vec((0usize..12, 0usize..12), 0..20))
        .prop_map(|(k, edges)| build_custom(metropolis(k, &edges), true).unwrap())
}

fn agent_values(k: usize, d: usize) -> impl Strategy<Value = Vec<Vector>> {
    prop::collection::vec(prop::collection::vec(-10.0f64..10.0, d), k)
        .prop_map(|vs| vs.into_iter().map(Vector::from_vec).collect())
}

fn mean(vs: &[Vector]) -> Vector {
    vs.iter().fold(Vector::zeros(vs[0].len()), |a, v| a + v) / vs.len() as f64
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn spectral_gap_matches_eigendecomposition(w in graph()) {
        prop_assert!((w.rho() - eig_rho(w.weights())).abs() < 1e-9);
        prop_assert!(w.rho() < 1.0);
    }

    #[test]
    fn gossip_preserves_mean_and_contracts(
        (w, vals) in graph().prop_flat_map(|w| { let k = w.k(); (Just(w), agent_values(k, 3)) })
    ) {
        let mixed = gossip_mix_vectors(&vals, &w).unwrap();
        let (m0, m1) = (mean(&vals), mean(&mixed));
        prop_assert!((&m0 - &m1).amax() < 1e-12);
        let dev = |vs: &[Vector]| vs.iter().map(|v| (v - &m0).norm_squared()).sum::<f64>();
        prop_assert!(dev(&mixed) <= w.rho() * dev(&vals) + 1e-9);
    }

    #[test]
    fn ring_rho_matches_closed_form(k in 3usize..40) {
        let w = build_ring(k).unwrap();
        let c = (2.0 * std::f64::consts::PI / k as f64).cos();
        // second eigenvalue of the lazy cycle, or the most negative one
        let lam2 = (1.0 + 2.0 * c) / 3.0;
        let lam_min = if k % 2 == 0 { -1.0 / 3.0 } else {
            (1.0 + 2.0 * (std::f64::consts::PI * (k - 1) as f64 / k as f64).cos()) / 3.0
        };
        let expected = if k == 3 { 0.0 } else { lam2.abs().max(lam_min.abs()).powi(2) };
        prop_assert!((w.rho() - expected).abs() < 1e-9, "k = {}: {} vs {}", k, w.rho(), expected);
    }

    #[test]
    fn neumann_error_within_lemma_bound(seed in 0u64..1000, b in 1usize..40) {
        use rand::SeedableRng;
        use rand_distr::{Distribution, StandardNormal};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let n = 4;
        let g = Matrix::from_fn(n, n, |_, _| StandardNormal.sample(&mut rng));
        let q = g.qr().q();
        let (mu, l) = (0.3, 1.0);
        let eigs = Vector::from_fn(n, |i, _| mu + (l - mu) * i as f64 / (n - 1) as f64);
        let a = &q * Matrix::from_diagonal(&eigs) * q.transpose();
        let a = (&a + a.transpose()) * 0.5;
        let qb = neumann_chain(&vec![a.clone(); b], l).unwrap();
        let err = SymmetricEigen::new(&qb - a.try_inverse().unwrap()).eigenvalues.amax();
        let kappa = mu / l;
        prop_assert!(err <= (1.0 - kappa).powi(b as i32 + 1) / (l * kappa) + 1e-12);
    }

    #[test]
    fn libsvm_round_trip(rows in prop::collection::vec(
        (prop::bool::ANY, prop::collection::btree_map(1usize..30, -100.0f64..100.0, 0..8)), 1..20)
    ) {
        let text: String = rows.iter().map(|(pos, feats)| {
            let label = if *pos { "+1" } else { "-1" };
            let body: Vec<String> = feats.iter().map(|(i, v)| format!("{i}:{v}")).collect();
            format!("{label} {}\n", body.join(" "))
        }).collect();
        let parsed = parse_libsvm(text.as_bytes()).unwrap();
        prop_assert_eq!(parsed.len(), rows.len());
        for (p, (pos, feats)) in parsed.iter().zip(&rows) {
            prop_assert_eq!(p.label, if *pos { 1.0 } else { 0.0 });
            prop_assert_eq!(&p.features, feats);
        }
    }
}

#[test]
fn inverse_estimate_is_symmetric_when_draws_commute() {
    let q = Quadratic::new(3, &QuadraticParams { seed: 2, ..Default::default() }).unwrap();
    let w = build_ring(3).unwrap();
    let sched = make_schedule(&ScheduleConfig::Diminishing { c1: 10.0, mu: 1.0 }, 3, 10).unwrap();
    let ctx = RoundContext { problem: &q, mixing: &w, schedule: &sched, seed: 0 };
    let mut st = init_agents(&q, 3, 1).unwrap();
    for t in 0..20 {
        st = dsbo_round(&st, ctx, t).unwrap();
        for a in &st {
            assert!(dsbo_core::linalg::max_asymmetry(&a.q) < 1e-12);
            assert!(dsbo_core::linalg::max_asymmetry(&a.v[0]) < 1e-12);
        }
    }
}

#[test]
fn network_average_follows_the_averaged_direction() {
    // for doubly stochastic W: x̄_{t+1} = x̄_t − α_t z̄_t
    let q = Quadratic::new(5, &QuadraticParams { seed: 4, ..Default::default() }).unwrap();
    let w = build_ring(5).unwrap();
    let sched = make_schedule(&ScheduleConfig::Diminishing { c1: 10.0, mu: 1.0 }, 5, 10).unwrap();
    let ctx = RoundContext { problem: &q, mixing: &w, schedule: &sched, seed: 3 };
    let mut st = init_agents(&q, 5, 4).unwrap();
    for t in 0..30 {
        let xbar = mean(&st.iter().map(|a| a.x.clone()).collect::<Vec<_>>());
        let zbar = mean(&st.iter().map(|a| a.direction()).collect::<Vec<_>>());
        let next = dsbo_round(&st, ctx, t).unwrap();
        let xbar_next = mean(&next.iter().map(|a| a.x.clone()).collect::<Vec<_>>());
        assert!((xbar_next - (xbar - zbar * sched.alpha(t))).amax() < 1e-12);
        st = next;
    }
}

#[test]
fn estimators_track_exact_quantities_without_noise() {
    let params = PolicyEvalParams {
        n_states: 12,
        noise: dsbo_core::problems::PolicyEvalNoise::zero(),
        heterogeneous: false,
        ..Default::default()
    };
    let pe = PolicyEval::new(3, &params).unwrap();
    let w = build_ring(3).unwrap();
    let sched = make_schedule(&ScheduleConfig::Diminishing { c1: 10.0, mu: 1.0 }, 3, 10).unwrap();
    let ctx = RoundContext { problem: &pe, mixing: &w, schedule: &sched, seed: 0 };
    let mut st = init_agents(&pe, 3, 1).unwrap();
    for t in 0..3000 {
        st = dsbo_round(&st, ctx, t).unwrap();
    }
    let x = &st[0].x;
    let xstar = Vector::from_vec(pe.optimum().unwrap().x);
    assert!((x - &xstar).norm() < 1e-4);
    assert!((&st[0].y - pe.exact_lower(x)).norm() < 1e-3);
    assert!((&st[0].u - pe.exact_hess_xy_g(x, &st[0].y)).amax() < 1e-12);
}

#[test]
fn quadratic_hessian_draws_stay_admissible() {
    use dsbo_core::rng::{stream, Purpose};
    let q = Quadratic::new(
        2,
        &QuadraticParams { noise: QuadraticNoise { sigma_f: 1.0, sigma_g: 5.0 }, ..Default::default() },
    )
    .unwrap();
    let c = q.constants().clone();
    let x = Vector::zeros(4);
    for n in 0..200 {
        let mut rng = stream(0, Purpose::Diagnostics, 0, n, 0);
        for h in q.sample(n % 2, &x, &x, 3, &mut rng).hyy_g_draws {
            let e = SymmetricEigen::new(h).eigenvalues;
            assert!(e.min() >= c.kappa_g * c.l_g - 1e-12 && e.max() <= (2.0 - c.kappa_g) * c.l_g + 1e-12);
        }
    }
}
