use mdsp::correlation::estimate_rho;
use mdsp::{Correlation, CorrelationKind, Matrix};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn dense_r(kind: CorrelationKind, rho: f64, m: usize) -> DMatrix<f64> {
    DMatrix::from_fn(m, m, |s, t| match kind {
        CorrelationKind::Independence => f64::from(u8::from(s == t)),
        CorrelationKind::Exchangeable => {
            if s == t {
                1.0
            } else {
                rho
            }
        }
        CorrelationKind::Ar1 => rho.powi((s as i32 - t as i32).abs()),
    })
}

fn dense_solve(kind: CorrelationKind, rho: f64, v: &[f64]) -> Vec<f64> {
    let r = dense_r(kind, rho, v.len());
    r.lu().solve(&DVector::from_column_slice(v)).unwrap().as_slice().to_vec()
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let den: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    num / den.max(f64::MIN_POSITIVE)
}

#[test]
fn ar1_unit_vector_matches_dense_lu() {
    let c = Correlation::new(CorrelationKind::Ar1, 0.5, 5).unwrap();
    let mut e1 = vec![0.0; 5];
    e1[0] = 1.0;
    let got = c.inverse_apply(&e1);
    let want = dense_solve(CorrelationKind::Ar1, 0.5, &e1);
    for (g, w) in got.iter().zip(&want) {
        assert!((g - w).abs() < 1e-10, "{g} vs {w}");
    }
}

#[test]
fn explicit_matrix_matches_definition() {
    for (kind, rho) in [(CorrelationKind::Exchangeable, 0.3), (CorrelationKind::Ar1, -0.6)] {
        let c = Correlation::new(kind, rho, 6).unwrap();
        let r = c.matrix();
        let d = dense_r(kind, rho, 6);
        for s in 0..6 {
            for t in 0..6 {
                assert!((r[(s, t)] - d[(s, t)]).abs() < 1e-15);
            }
        }
    }
}

#[test]
fn exchangeable_bound_is_enforced() {
    let m = 5;
    let lower = -1.0 / (m as f64 - 1.0);
    assert!(Correlation::new(CorrelationKind::Exchangeable, lower, m).is_err());
    assert!(Correlation::new(CorrelationKind::Exchangeable, lower + 1e-3, m).is_ok());
    assert!(Correlation::new(CorrelationKind::Exchangeable, 1.0, m).is_err());
    assert!(Correlation::new(CorrelationKind::Ar1, -1.0, m).is_err());
}

#[test]
fn rho_estimate_is_order_invariant() {
    let rows: Vec<Vec<f64>> = (0..7)
        .map(|i| (0..4).map(|t| ((i * 7 + t * 3) as f64).sin()).collect())
        .collect();
    let mut rev = rows.clone();
    rev.reverse();
    for kind in [CorrelationKind::Exchangeable, CorrelationKind::Ar1] {
        let a = estimate_rho(kind, &Matrix::from_rows(&rows)).unwrap();
        let b = estimate_rho(kind, &Matrix::from_rows(&rev)).unwrap();
        assert!((a - b).abs() < 1e-14);
    }
}

fn kind_and_rho() -> impl Strategy<Value = (CorrelationKind, f64, usize)> {
    (2usize..=50).prop_flat_map(|m| {
        let lower = -1.0 / (m as f64 - 1.0) + 1e-3;
        prop_oneof![
            Just((CorrelationKind::Independence, 0.0, m)),
            (lower..0.95f64).prop_map(move |r| (CorrelationKind::Exchangeable, r, m)),
            (-0.95..0.95f64).prop_map(move |r| (CorrelationKind::Ar1, r, m)),
        ]
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn inverse_apply_matches_dense_solve(
        (kind, rho, m) in kind_and_rho(),
        seed in proptest::collection::vec(-3.0f64..3.0, 50),
    ) {
        let v = &seed[..m];
        prop_assume!(v.iter().any(|x| x.abs() > 1e-3));
        let c = Correlation::new(kind, rho, m).unwrap();
        let got = c.inverse_apply(v);
        let want = dense_solve(kind, rho, v);
        prop_assert!(rel_err(&got, &want) <= 1e-10, "{kind:?} rho={rho} m={m}: {}", rel_err(&got, &want));
        let quad: f64 = v.iter().zip(&got).map(|(a, b)| a * b).sum();
        prop_assert!(quad > 0.0);
    }
}
