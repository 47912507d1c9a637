mod common;

use breuer_major::{pair_expectation, CrossCovarianceMatrix, Error, MultiIndex};
use common::{pair_expectation_oracle, random_feasible_rho, Uniform};
use nalgebra::{dmatrix, DMatrix};
use proptest::prelude::*;

fn rho1(v: f64) -> CrossCovarianceMatrix {
    CrossCovarianceMatrix::new(DMatrix::from_element(1, 1, v)).unwrap()
}

fn mi(a: &[usize]) -> MultiIndex {
    MultiIndex::new(a.to_vec())
}

#[test]
fn mehler_identity() {
    for q in 0..=6usize {
        let fact = (1..=q).product::<usize>() as f64;
        for &r in &[-0.9, -0.5, 0.0, 0.3, 0.9] {
            let got = pair_expectation(&mi(&[q]), &mi(&[q]), &rho1(r)).unwrap();
            let want = fact * r.powi(q as i32);
            assert!((got - want).abs() <= 1e-10 * want.abs().max(1e-300), "q={q} ρ={r}");
        }
    }
}

#[test]
fn small_examples() {
    let rho = CrossCovarianceMatrix::new(dmatrix![0.3, 0.2; -0.1, 0.4]).unwrap();
    let r = rho.matrix().clone();
    let v = pair_expectation(&mi(&[1]), &mi(&[1]), &rho1(0.7)).unwrap();
    assert!((v - 0.7).abs() < 1e-15);
    let v = pair_expectation(&mi(&[1, 1]), &mi(&[1, 1]), &rho).unwrap();
    let want = r[(0, 0)] * r[(1, 1)] + r[(0, 1)] * r[(1, 0)];
    assert!((v - want).abs() < 1e-15);
    let v = pair_expectation(&mi(&[2, 0]), &mi(&[0, 2]), &rho).unwrap();
    assert!((v - 2.0 * r[(0, 1)].powi(2)).abs() < 1e-15);
    // Different orders are orthogonal.
    assert_eq!(pair_expectation(&mi(&[2, 1]), &mi(&[1, 1]), &rho).unwrap(), 0.0);
}

#[test]
fn oracle_equivalence() {
    let mut rng = Uniform::new(2024);
    for m in 1..=3usize {
        for q in 0..=4usize {
            let level = MultiIndex::of_order(m, q);
            for a in &level {
                for b in &level {
                    for _ in 0..20 {
                        let r = random_feasible_rho(m, &mut rng);
                        let got =
                            pair_expectation(a, b, &CrossCovarianceMatrix::new(r.clone()).unwrap())
                                .unwrap();
                        let want = pair_expectation_oracle(a.exponents(), b.exponents(), &r);
                        let scale = want.abs().max(1e-12);
                        assert!(
                            (got - want).abs() <= 1e-9 * scale,
                            "a={a:?} b={b:?} got {got} want {want}"
                        );
                    }
                }
            }
        }
    }
}

#[test]
fn infeasible_rho_is_rejected() {
    assert!(matches!(
        CrossCovarianceMatrix::new(dmatrix![1.5]),
        Err(Error::InvalidArgument(_))
    ));
    // Entries in [-1, 1] but the joint covariance is not PSD.
    assert!(CrossCovarianceMatrix::new(dmatrix![0.9, 0.9; 0.9, -0.9]).is_err());
    assert!(CrossCovarianceMatrix::new(dmatrix![0.5, 0.5; 0.5, 0.5]).is_ok());
}

fn arb_case() -> impl Strategy<Value = (Vec<usize>, Vec<usize>, DMatrix<f64>)> {
    (1usize..=3, 0usize..=3, any::<u64>()).prop_map(|(m, q, seed)| {
        let mut rng = Uniform::new(seed);
        let level = MultiIndex::of_order(m, q);
        let pick = |rng: &mut Uniform| {
            let k = (rng.next_u64() % level.len() as u64) as usize;
            level[k].exponents().to_vec()
        };
        let a = pick(&mut rng);
        let b = pick(&mut rng);
        (a, b, random_feasible_rho(m, &mut rng))
    })
}

proptest! {
    #[test]
    fn symmetry_under_transpose((a, b, r) in arb_case()) {
        let rho = CrossCovarianceMatrix::new(r).unwrap();
        let lhs = pair_expectation(&mi(&a), &mi(&b), &rho).unwrap();
        let rhs = pair_expectation(&mi(&b), &mi(&a), &rho.transpose()).unwrap();
        prop_assert_eq!(lhs.to_bits(), rhs.to_bits());
    }

    #[test]
    fn identity_rho_is_orthonormal((a, b, _r) in arb_case()) {
        let m = a.len();
        let id = CrossCovarianceMatrix::new(DMatrix::identity(m, m)).unwrap();
        let v = pair_expectation(&mi(&a), &mi(&b), &id).unwrap();
        let want = if a == b { mi(&a).factorial() as f64 } else { 0.0 };
        prop_assert!((v - want).abs() < 1e-12);
    }

    #[test]
    fn cauchy_schwarz((a, _b, r) in arb_case()) {
        let rho = CrossCovarianceMatrix::new(r).unwrap();
        let v = pair_expectation(&mi(&a), &mi(&a), &rho).unwrap();
        prop_assert!(v.abs() <= mi(&a).factorial() as f64 * (1.0 + 1e-12));
    }
}
