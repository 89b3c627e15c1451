use mftg::lqg::{baseline_cost, solve_riccati, TeamParams, TeamType};
use mftg::rng::{stream, Domain};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::Rng;
use rand_distr::StandardNormal;

fn scalar() -> TeamType<f64> {
    TeamParams::scalar(1.5, 2.0, 2.0, 1.0, 6.0, 2.0).build().unwrap()
}

/// Fixed point of the scalar algebraic Riccati map, by plain iteration.
fn dare_by_iteration(a: f64, b: f64, q: f64, r: f64) -> f64 {
    let mut p = 0.0;
    for _ in 0..10_000 {
        let next = q + a * a * p - (a * b * p).powi(2) / (r + b * b * p);
        if (next - p).abs() < 1e-15 {
            return next;
        }
        p = next;
    }
    p
}

#[test]
fn long_horizon_matches_stationary_solution() {
    let sched = solve_riccati(&scalar(), 50).unwrap();
    let p_inf = dare_by_iteration(1.5, 2.0, 2.0, 1.0);
    // 4 P^2 - 9.25 P - 2 = 0
    let root = (9.25 + (9.25f64 * 9.25 + 32.0).sqrt()) / 8.0;
    assert!((p_inf - root).abs() < 1e-12);
    assert!((sched.p()[0][(0, 0)] - p_inf).abs() < 1e-8);
    let p = sched.p()[0][(0, 0)];
    let residual = 2.0 + 2.25 * p - (3.0 * p).powi(2) / (1.0 + 4.0 * p) - p;
    assert!(residual.abs() < 1e-8);
}

/// Monte Carlo cost of full-state feedback `u = -L_k x`, which is what the
/// baseline cost measures.
#[test]
fn baseline_cost_matches_full_information_monte_carlo() {
    let ty = scalar();
    let horizon = 50;
    let sched = solve_riccati(&ty, horizon).unwrap();
    let j_star = baseline_cost(&ty, &sched).unwrap();
    let runs = 40_000;
    let mut rng = stream(17, Domain::Simulation, 0, 0, 0);
    let mut total = 0.0;
    for _ in 0..runs {
        let mut x = 2f64.sqrt() * rng.sample::<f64, _>(StandardNormal);
        let mut cost = 0.0;
        for k in 0..horizon {
            let u = -sched.l()[k][(0, 0)] * x;
            cost += 2.0 * x * x + u * u;
            x = 1.5 * x + 2.0 * u + 6f64.sqrt() * rng.sample::<f64, _>(StandardNormal);
        }
        total += cost / horizon as f64;
    }
    let mc = total / runs as f64;
    assert!((mc - j_star).abs() < 0.01 * j_star, "mc {mc} vs {j_star}");
}

#[test]
fn feedback_beats_open_loop() {
    let ty = scalar();
    let horizon = 20;
    let sched = solve_riccati(&ty, horizon).unwrap();
    let j_star = baseline_cost(&ty, &sched).unwrap();
    // u = 0: E x_k^2 = 2.25 E x_{k-1}^2 + 6
    let mut var = 2.0;
    let mut open = 0.0;
    for _ in 0..horizon {
        open += 2.0 * var;
        var = 2.25 * var + 6.0;
    }
    assert!(j_star < open / horizon as f64);
}

fn random_type(n: usize, m: usize, seed: u64) -> TeamType<f64> {
    let mut rng = stream(seed, Domain::Initial, 99, 0, 0);
    let mut g = |r, c| DMatrix::from_fn(r, c, |_, _| rng.sample::<f64, _>(StandardNormal));
    let a = g(n, n);
    let b = g(n, m);
    let qf = g(n, n);
    let rf = g(m, m);
    let q = &qf * qf.transpose();
    let r = &rf * rf.transpose() + DMatrix::identity(m, m);
    TeamType::new(TeamParams {
        id: "random".into(),
        prob: 1.0,
        a,
        b,
        q,
        r,
        k_w: DMatrix::identity(n, n),
        sigma0: DMatrix::identity(n, n),
        nu: DVector::zeros(n),
    })
    .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn schedules_are_psd_and_end_free(seed in 0u64..10_000, n in 1usize..4, m in 1usize..3, horizon in 1usize..30) {
        let ty = random_type(n, m, seed);
        let sched = solve_riccati(&ty, horizon).unwrap();
        for p in sched.p() {
            prop_assert_eq!(p, &p.transpose());
            let min = p.clone().symmetric_eigenvalues().min();
            prop_assert!(min >= -1e-10 * (1.0 + p.norm()));
        }
        for g in sched.gamma() {
            let min = g.clone().symmetric_eigenvalues().min();
            prop_assert!(min >= -1e-9 * (1.0 + g.norm()));
        }
        prop_assert!(sched.gamma()[horizon - 1].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn control_is_linear(seed in 0u64..10_000, a in -3.0f64..3.0, b in -3.0f64..3.0) {
        let ty = random_type(3, 2, seed);
        let sched = solve_riccati(&ty, 10).unwrap();
        let z1 = DVector::from_vec(vec![0.3, -1.2, 2.0]);
        let z2 = DVector::from_vec(vec![-0.7, 0.4, 1.1]);
        for k in 0..10 {
            let lhs = sched.control_action(k, &(&z1 * a + &z2 * b)).unwrap();
            let rhs = sched.control_action(k, &z1).unwrap() * a + sched.control_action(k, &z2).unwrap() * b;
            prop_assert!((lhs - &rhs).norm() <= 1e-12 * (1.0 + rhs.norm()));
        }
    }
}
