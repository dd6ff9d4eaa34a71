use dtnfm::linalg::{singular_values, thin_svd};
use dtnfm::prox::{
    closed_form_spectrum, prox_objective, shrink_spectrum, tail_multiplier, tnf_norm, tnf_prox, tnf_prox_with,
    ShrinkRule, SpectralShrinkParams,
};
use nalgebra::DMatrix;
use proptest::prelude::*;

fn matrix(max_rows: usize, max_cols: usize) -> impl Strategy<Value = DMatrix<f64>> {
    (1..=max_rows, 1..=max_cols).prop_flat_map(|(r, c)| {
        prop::collection::vec(-5.0f64..5.0, r * c).prop_map(move |v| DMatrix::from_vec(r, c, v))
    })
}

fn params() -> impl Strategy<Value = SpectralShrinkParams> {
    (0.0f64..3.0, 0usize..4, 0.0f64..2.5).prop_map(|(tau, t, alpha)| SpectralShrinkParams { tau, t, alpha })
}

fn orthogonal(n: usize, seed: &[f64]) -> DMatrix<f64> {
    DMatrix::from_fn(n, n, |i, j| seed[(i * n + j) % seed.len()] + if i == j { 0.5 } else { 0.0 })
        .qr()
        .q()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn prox_beats_simple_candidates(b in matrix(6, 5), p in params()) {
        let z = tnf_prox(&b, &p).unwrap();
        let f = prox_objective(&z, &b, &p).unwrap();
        let svd = thin_svd(&b).unwrap();
        let sigma: Vec<f64> = svd.singular_values.iter().copied().collect();
        let cands = [
            b.clone(),
            DMatrix::zeros(b.nrows(), b.ncols()),
            svd.reconstruct_with(&closed_form_spectrum(&sigma, &p)),
            &b * 0.5,
        ];
        for c in &cands {
            prop_assert!(f <= prox_objective(c, &b, &p).unwrap() + 1e-9);
        }
    }

    #[test]
    fn prox_spectrum_is_valid(b in matrix(6, 6), p in params()) {
        let sigma = singular_values(&b).unwrap();
        let rho = shrink_spectrum(&sigma, &p);
        prop_assert_eq!(rho.len(), sigma.len());
        prop_assert!(rho.iter().all(|&r| r >= 0.0 && r.is_finite()));
        prop_assert!(rho.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn prox_is_local_minimum(b in matrix(4, 4), p in params(), dirs in prop::collection::vec(-1.0f64..1.0, 16 * 8)) {
        let z = tnf_prox(&b, &p).unwrap();
        let f = prox_objective(&z, &b, &p).unwrap();
        let n = b.len();
        for k in 0..8 {
            let d = DMatrix::from_fn(b.nrows(), b.ncols(), |i, j| dirs[k * 16 + (i * b.ncols() + j) % n]);
            for h in [1e-3, 1e-1] {
                prop_assert!(f <= prox_objective(&(&z + &d * h), &b, &p).unwrap() + 1e-9);
            }
        }
    }

    #[test]
    fn prox_is_orthogonally_invariant(b in matrix(4, 3), p in params(), s1 in prop::collection::vec(-1.0f64..1.0, 16), s2 in prop::collection::vec(-1.0f64..1.0, 9)) {
        let sigma = singular_values(&b).unwrap();
        // Ties and zero singular values make the minimizer non-unique.
        let separated = sigma.windows(2).all(|w| w[0] - w[1] > 1e-3) && sigma.last().is_some_and(|&s| s > 1e-3);
        prop_assume!(separated);
        let q = orthogonal(b.nrows(), &s1);
        let r = orthogonal(b.ncols(), &s2);
        let lhs = tnf_prox(&(&q * &b * &r), &p).unwrap();
        let rhs = &q * tnf_prox(&b, &p).unwrap() * &r;
        let f_lhs = prox_objective(&lhs, &(&q * &b * &r), &p).unwrap();
        let f_rhs = prox_objective(&rhs, &(&q * &b * &r), &p).unwrap();
        prop_assert!((f_lhs - f_rhs).abs() <= 1e-8 * (1.0 + f_lhs.abs()));
    }

    #[test]
    fn identity_cases(b in matrix(5, 5), t in 0usize..6, alpha in 0.0f64..2.0) {
        let p0 = SpectralShrinkParams { tau: 0.0, t, alpha };
        prop_assert!((tnf_prox(&b, &p0).unwrap() - &b).abs().max() < 1e-10);
        let k = b.nrows().min(b.ncols());
        let p = SpectralShrinkParams { tau: 1.0, t: k, alpha };
        prop_assert!((tnf_prox(&b, &p).unwrap() - &b).abs().max() < 1e-10);
    }

    #[test]
    fn reduces_to_singular_value_thresholding(b in matrix(6, 5), tau in 0.0f64..4.0) {
        let p = SpectralShrinkParams { tau, t: 0, alpha: 0.0 };
        let svd = thin_svd(&b).unwrap();
        let soft: Vec<f64> = svd.singular_values.iter().map(|s| (s - tau).max(0.0)).collect();
        let expected = svd.reconstruct_with(&soft);
        prop_assert!((tnf_prox(&b, &p).unwrap() - expected).abs().max() < 1e-10);
    }

    #[test]
    fn exact_matches_closed_form_when_admissible(b in matrix(6, 5), p in params()) {
        let sigma = singular_values(&b).unwrap();
        let cf = closed_form_spectrum(&sigma, &p);
        let admissible = tail_multiplier(&sigma, &p).is_some() && cf.windows(2).all(|w| w[0] >= w[1]);
        prop_assume!(admissible);
        let exact = shrink_spectrum(&sigma, &p);
        for (a, b) in exact.iter().zip(&cf) {
            prop_assert!((a - b).abs() <= 1e-9 * (1.0 + b.abs()));
        }
        prop_assert!(exact[..p.t.min(sigma.len())] == sigma[..p.t.min(sigma.len())]);
    }

    #[test]
    fn tnf_norm_is_unitarily_invariant(b in matrix(4, 3), t in 0usize..3, alpha in 0.0f64..2.0, s in prop::collection::vec(-1.0f64..1.0, 16)) {
        let q = orthogonal(b.nrows(), &s);
        let a = tnf_norm(&b, t, alpha).unwrap();
        let c = tnf_norm(&(&q * &b), t, alpha).unwrap();
        prop_assert!((a - c).abs() < 1e-9 * (1.0 + a.abs()));
    }
}

#[test]
fn closed_form_rule_is_selectable() {
    let b = DMatrix::from_diagonal(&nalgebra::DVector::from_row_slice(&[3.0, 2.9]));
    let p = SpectralShrinkParams::new(1.0, 1, 1.8).unwrap();
    let cf = tnf_prox_with(&b, &p, ShrinkRule::ClosedForm).unwrap();
    let ex = tnf_prox_with(&b, &p, ShrinkRule::Exact).unwrap();
    assert!((cf[(1, 1)] - 3.7).abs() < 1e-12);
    assert!(prox_objective(&ex, &b, &p).unwrap() < prox_objective(&cf, &b, &p).unwrap());
}
