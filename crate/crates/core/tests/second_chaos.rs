mod common;

use std::f64::consts::PI;

use breuer_major::second_chaos::{spectral_h, trace_integrand};
use breuer_major::spectral::HermiteAmplitude;
use breuer_major::{
    c_matrix, chaos_coefficients, v2_spectral, v2_trace, CovarianceModel, Error, Functional,
    FunctionalSpec, MultiIndex, SecondChaosMatrix, SpectralModel,
};
use common::{simpson, Uniform};
use nalgebra::{dmatrix, DMatrix};
use proptest::prelude::*;

fn k(x: f64) -> f64 {
    (-0.5 * x * x).exp()
}

fn single_noise(orders: &[usize], lengths: &[f64]) -> SpectralModel {
    let amps = orders
        .iter()
        .zip(lengths)
        .map(|(&order, &length)| HermiteAmplitude { order, length })
        .collect();
    SpectralModel::single_noise_unmixed(1, amps).unwrap()
}

#[test]
fn c_matrix_examples() {
    let c = c_matrix(&FunctionalSpec::Product { i: 0, j: 1 }.build(2).unwrap(), 32).unwrap();
    assert!((c.matrix() - dmatrix![0.0, 1.0; 1.0, 0.0]).abs().max() < 1e-13);
    let c = c_matrix(&FunctionalSpec::Hermite { axis: 0, degree: 2 }.build(2).unwrap(), 32).unwrap();
    assert!((c.matrix() - dmatrix![2.0, 0.0; 0.0, 0.0]).abs().max() < 1e-13);
    let c = c_matrix(&FunctionalSpec::AbsCentered { axis: 0 }.build(2).unwrap(), 64).unwrap();
    assert!((c.matrix()[(0, 0)] - (2.0 / PI).sqrt()).abs() < 1e-12);
    assert!(c.matrix()[(0, 1)].abs() < 1e-14 && c.matrix()[(1, 1)].abs() < 1e-14);
    // Odd functionals have no second chaos.
    let c = c_matrix(&Functional::new(2, "odd", |x| x[0].powi(3) + x[1]), 32).unwrap();
    assert!(c.matrix().abs().max() < 1e-12);
}

#[test]
fn c_matrix_matches_chaos_coefficients() {
    let gs = [
        Functional::new(2, "mix", |x| (x[0] - 0.4 * x[1]).cos() + x[0] * x[1].powi(2)),
        Functional::new(3, "exp", |x| (0.3 * x[0] + 0.2 * x[1] - 0.1 * x[2]).exp()),
        FunctionalSpec::AbsCentered { axis: 1 }.build(3).unwrap(),
    ];
    for g in &gs {
        let m = g.m();
        let c = c_matrix(g, 32).unwrap();
        let e = chaos_coefficients(g, 2, 32).unwrap();
        for j in 0..m {
            for l in 0..m {
                let mut a = vec![0; m];
                a[j] += 1;
                a[l] += 1;
                let coef = e.coefficient(&MultiIndex::new(a));
                let want = if j == l { 2.0 * coef } else { coef };
                assert!((c.matrix()[(j, l)] - want).abs() < 1e-12, "{} ({j},{l})", g.label());
            }
        }
    }
}

#[test]
fn trace_and_spectral_examples() {
    // G = H2: C = [[2]], V2 = ½ ∫ 4 e^{-x²} = 2√π.
    let c = SecondChaosMatrix(dmatrix![2.0]);
    let model = CovarianceModel::gaussian(1, vec![1.0]).unwrap();
    let t = v2_trace(&model, &c, model.decay_radius).unwrap();
    assert!((t - 2.0 * PI.sqrt()).abs() < 1e-6, "{t}");
    let spec = single_noise(&[0], &[1.0]);
    let s = v2_spectral(&spec, &c).unwrap();
    assert!((s - 2.0 * PI.sqrt()).abs() < 1e-8, "{s}");

    // Zero matrix short-circuits; dimension is checked.
    assert_eq!(v2_trace(&model, &SecondChaosMatrix(dmatrix![0.0]), 5.0).unwrap(), 0.0);
    assert!(matches!(
        v2_trace(&model, &SecondChaosMatrix(DMatrix::zeros(2, 2)), 5.0),
        Err(Error::DimensionMismatch { .. })
    ));
    let general = SpectralModel::independent_gaussian(1, vec![1.0]).unwrap();
    assert!(v2_spectral(&general, &c).is_err());
}

#[test]
fn identical_amplitudes_cross_check() {
    // α1 = α2: r(x) = k(x) 11ᵀ, so r(0) is singular and the trace route
    // cannot be whitened; integrate the trace integrand directly instead.
    let spec = single_noise(&[0, 0], &[1.0, 1.0]);
    let c = DMatrix::from_row_slice(2, 2, &[0.3, -0.7, -0.7, 1.4]);
    let ones_c_ones: f64 = c.iter().sum();
    let by_hand = simpson(
        |x| trace_integrand(&(DMatrix::from_element(2, 2, 1.0) * k(x)), &c),
        -20.0,
        20.0,
        20_000,
    );
    assert!((by_hand - 0.5 * ones_c_ones.powi(2) * PI.sqrt()).abs() < 1e-10);
    let s = v2_spectral(&spec, &SecondChaosMatrix(c)).unwrap();
    assert!((s - by_hand).abs() < 1e-8 * by_hand.max(1.0), "{s} vs {by_hand}");
    // When 1ᵀC1 cancels to zero the integral vanishes; the quadrature must
    // still terminate.
    let null = DMatrix::from_row_slice(2, 2, &[0.3, -0.7, -0.7, 1.1]);
    assert!(v2_spectral(&spec, &SecondChaosMatrix(null)).unwrap().abs() < 1e-12);
}

fn rotation(theta: f64) -> DMatrix<f64> {
    dmatrix![theta.cos(), -theta.sin(); theta.sin(), theta.cos()]
}

#[test]
fn congruence_invariance() {
    let base = CovarianceModel::gaussian(1, vec![1.0, 0.5]).unwrap();
    let c = dmatrix![0.7, 0.2; 0.2, -0.4];
    let v0 = v2_trace(&base, &SecondChaosMatrix(c.clone()), 12.0).unwrap();
    for &theta in &[0.3, 1.1, 2.5] {
        let q = rotation(theta);
        let qq = q.clone();
        let rotated = CovarianceModel::custom(1, 2, 12.0, "rot", move |x: &[f64]| {
            let r = dmatrix![k(x[0]), 0.0; 0.0, (-2.0 * x[0] * x[0]).exp()];
            &qq * r * qq.transpose()
        })
        .unwrap();
        let c2 = &q * &c * q.transpose();
        let v = v2_trace(&rotated, &SecondChaosMatrix(c2), 12.0).unwrap();
        assert!((v - v0).abs() < 1e-10 * v0.max(1.0), "θ={theta}: {v} vs {v0}");
    }
}

fn random_symmetric(m: usize, rng: &mut Uniform) -> DMatrix<f64> {
    let a = DMatrix::from_fn(m, m, |_, _| rng.range(-1.0, 1.0));
    0.5 * (&a + a.transpose())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn h_is_even(seed in any::<u64>(), t in -6.0f64..6.0) {
        let mut rng = Uniform::new(seed);
        let spec = single_noise(&[0, 2, 1], &[1.0, 1.0, 0.6]);
        let c = SecondChaosMatrix(random_symmetric(3, &mut rng));
        let a = spectral_h(&spec, &c, &[t]).unwrap();
        let b = spectral_h(&spec, &c, &[-t]).unwrap();
        prop_assert!((a - b).abs() <= 1e-14 * a.abs().max(1.0));
    }

    #[test]
    fn second_chaos_variance_is_nonnegative(seed in any::<u64>()) {
        let mut rng = Uniform::new(seed);
        let spec = single_noise(&[0, 2], &[1.0, 1.0]);
        let model = CovarianceModel::from_spectral(spec.clone()).unwrap();
        let c = SecondChaosMatrix(random_symmetric(2, &mut rng));
        let t = v2_trace(&model, &c, model.decay_radius).unwrap();
        let s = v2_spectral(&spec, &c).unwrap();
        prop_assert!(t >= -1e-12 && s >= -1e-12);
        prop_assert!((t - s).abs() < 1e-3 * t.max(1.0), "{} vs {}", t, s);
    }
}
