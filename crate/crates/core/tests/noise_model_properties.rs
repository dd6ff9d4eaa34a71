use dtnfm::noise_model::{
    ablation_weights, build_weights, estimate_sigma_c, estimate_sigma_j, relative_weight, AblationMode,
    GroupNoiseStats, DEFAULT_EPS_P, SIGMA_FLOOR,
};
use nalgebra::DMatrix;
use proptest::prelude::*;

fn group(d2: usize, n: usize) -> impl Strategy<Value = (DMatrix<f64>, DMatrix<f64>)> {
    let len = 3 * d2 * n;
    (prop::collection::vec(0.0f64..255.0, len), prop::collection::vec(-40.0f64..40.0, len)).prop_map(move |(x, e)| {
        let xhat = DMatrix::from_vec(3 * d2, n, x);
        let y = &xhat + DMatrix::from_vec(3 * d2, n, e);
        (y, xhat)
    })
}

fn sigma0() -> impl Strategy<Value = [f64; 3]> {
    (0.0f64..60.0, 0.0f64..60.0, 0.0f64..60.0).prop_map(|(a, b, c)| [a, b, c])
}

proptest! {
    #[test]
    fn relative_weight_in_unit_interval(sc in prop::array::uniform3(0.0f64..100.0), sj in prop::collection::vec(0.0f64..100.0, 1..40)) {
        let p = relative_weight(&sc, &sj, DEFAULT_EPS_P);
        prop_assert!((0.0..=1.0).contains(&p));
    }

    #[test]
    fn relative_weight_is_scale_free(sc in prop::array::uniform3(1.0f64..100.0), sj in prop::collection::vec(1.0f64..100.0, 2..40), k in 0.01f64..100.0) {
        let p = relative_weight(&sc, &sj, 0.0);
        let q = relative_weight(&sc.map(|v| v * k), &sj.iter().map(|v| v * k).collect::<Vec<_>>(), 0.0);
        prop_assert!((p - q).abs() < 1e-9);
    }

    #[test]
    fn weights_positive_and_factor_noise_levels((y, x) in group(4, 7), s0 in sigma0()) {
        let stats = GroupNoiseStats::estimate(&y, &x, s0, DEFAULT_EPS_P).unwrap();
        prop_assert!(stats.sigma_c.iter().chain(&stats.sigma_j).all(|&s| s >= SIGMA_FLOOR));
        let w = build_weights(&stats, 4).unwrap();
        prop_assert!(w.c.iter().chain(&w.s).all(|&v| v > 0.0 && v.is_finite()));
        for i in 0..12 {
            for j in 0..7 {
                let level = stats.sigma_c[i / 4].powf(stats.p) * stats.sigma_j[j].powf(1.0 - stats.p);
                prop_assert!((w.c[i] * w.s[j] * level - 1.0).abs() < 1e-9);
            }
        }
        for mode in AblationMode::ALL {
            let w = ablation_weights(&stats, 4, mode).unwrap();
            prop_assert!(w.c.iter().chain(&w.s).all(|&v| v > 0.0 && v.is_finite()));
        }
    }

    #[test]
    fn clean_estimate_recovers_input_levels((y, _) in group(3, 5), s0 in sigma0()) {
        let sj = estimate_sigma_j(&y, &y, s0).unwrap();
        let rms = (s0.iter().map(|s| s * s).sum::<f64>() / 3.0).sqrt();
        prop_assert!(sj.iter().all(|&s| (s - rms).abs() < 1e-9));
        let sc = estimate_sigma_c(&y, &y, s0).unwrap();
        for c in 0..3 {
            prop_assert!((sc[c] - s0[c]).abs() < 1e-9);
        }
    }

    #[test]
    fn column_permutation_permutes_sigma_j((y, x) in group(2, 6), s0 in sigma0()) {
        let perm = [3usize, 0, 5, 1, 4, 2];
        let py = DMatrix::from_fn(y.nrows(), 6, |i, j| y[(i, perm[j])]);
        let px = DMatrix::from_fn(x.nrows(), 6, |i, j| x[(i, perm[j])]);
        let a = estimate_sigma_j(&y, &x, s0).unwrap();
        let b = estimate_sigma_j(&py, &px, s0).unwrap();
        for j in 0..6 {
            prop_assert_eq!(b[j], a[perm[j]]);
        }
        let ca = estimate_sigma_c(&y, &x, s0).unwrap();
        let cb = estimate_sigma_c(&py, &px, s0).unwrap();
        for c in 0..3 {
            prop_assert!((ca[c] - cb[c]).abs() < 1e-9 * (1.0 + ca[c]));
        }
    }
}

#[test]
fn mismatched_shapes_rejected() {
    let y = DMatrix::<f64>::zeros(12, 4);
    assert!(estimate_sigma_j(&y, &DMatrix::zeros(12, 5), [1.0; 3]).is_err());
    assert!(estimate_sigma_c(&DMatrix::zeros(10, 4), &DMatrix::zeros(10, 4), [1.0; 3]).is_err());
}
