use dtnfm::admm::{solve, x_update, DiagonalWeights, SolverConfig};
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn instance(rows: usize, cols: usize, seed: u64) -> (DMatrix<f64>, DiagonalWeights) {
    scaled_instance(rows, cols, seed, 1.0)
}

fn scaled_instance(rows: usize, cols: usize, seed: u64, scale: f64) -> (DMatrix<f64>, DiagonalWeights) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let u = DMatrix::from_fn(rows, 3, |_, _| rng.random_range(0.0..1.0));
    let v = DMatrix::from_fn(3, cols, |_, _| rng.random_range(0.0..1.0));
    let y = &u * &v / 3.0 + DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-0.2..0.2));
    let c = (0..rows).map(|i| scale * [0.4, 0.7, 0.5][3 * i / rows]).collect();
    let s = (0..cols).map(|_| rng.random_range(0.6..1.4)).collect();
    (y, DiagonalWeights::new(c, s).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn x_update_is_stationary(seed in any::<u64>(), rho in 0.01f64..10.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (rows, cols) = (rng.random_range(3..20) * 3, rng.random_range(1..15));
        let y = DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-3.0..3.0));
        let z = DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-3.0..3.0));
        let a = DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-3.0..3.0));
        let c: Vec<f64> = (0..rows).map(|_| rng.random_range(0.1..3.0)).collect();
        let s: Vec<f64> = (0..cols).map(|_| rng.random_range(0.1..3.0)).collect();
        let w = DiagonalWeights::new(c.clone(), s.clone()).unwrap();
        let x = x_update(&y, &z, &a, &w, rho).unwrap();
        for i in 0..rows {
            for j in 0..cols {
                let w2 = c[i] * c[i] * s[j] * s[j];
                let g = -2.0 * w2 * (y[(i, j)] - x[(i, j)]) + a[(i, j)] + rho * (x[(i, j)] - z[(i, j)]);
                prop_assert!(g.abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn solver_output_is_finite_and_deterministic(seed in any::<u64>()) {
        let (y, w) = instance(27, 12, seed);
        let cfg = SolverConfig { record_trace: true, ..SolverConfig::default() };
        let a = solve(&y, &w, &cfg).unwrap();
        let b = solve(&y, &w, &cfg).unwrap();
        prop_assert_eq!(&a.x, &b.x);
        prop_assert!(a.x.iter().all(|v| v.is_finite()));
        let trace = a.trace.unwrap();
        prop_assert_eq!(trace.len(), a.iterations);
        prop_assert!(a.iterations <= cfg.max_iters);
    }

    #[test]
    fn rho_follows_schedule(seed in any::<u64>(), rho0 in 0.05f64..2.0, mu in 1.0001f64..1.5) {
        let (y, w) = instance(12, 6, seed);
        let cfg = SolverConfig { rho0, mu, max_iters: 20, eps: Some(1e-300), record_trace: true, ..SolverConfig::default() };
        let out = solve(&y, &w, &cfg).unwrap();
        for (k, r) in out.trace.unwrap().iter().enumerate() {
            prop_assert!((r.rho - rho0 * mu.powi(k as i32)).abs() <= 1e-12 * r.rho);
        }
    }
}

#[test]
fn primal_residual_tail_is_nonincreasing_on_group_sized_problem() {
    // c·s around 2, the scale the pipeline produces with weight_ref = 0.5
    let (y, w) = scaled_instance(108, 60, 11, 4.0);
    let cfg = SolverConfig { record_trace: true, eps: Some(1e-300), ..SolverConfig::default() };
    let out = solve(&y, &w, &cfg).unwrap();
    let trace = out.trace.unwrap();
    assert_eq!(trace.len(), 10);
    let tail: Vec<f64> = trace[5..].iter().map(|r| r.primal).collect();
    assert!(tail.windows(2).all(|p| p[1] <= p[0] * (1.0 + 1e-9)), "{tail:?}");
}

#[test]
fn converged_solution_is_a_fixed_point() {
    let (y, w) = instance(36, 10, 3);
    let cfg = SolverConfig { max_iters: 2000, eps: Some(1e-9), mu: 1.01, ..SolverConfig::default() };
    let out = solve(&y, &w, &cfg).unwrap();
    assert!(out.converged, "{:?}", out.last);
    assert!((&out.x - &out.z).norm() < 1e-8);
}
