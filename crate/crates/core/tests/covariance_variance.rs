mod common;

use std::f64::consts::PI;

use breuer_major::diagram::CrossCovarianceMatrix;
use breuer_major::rng::CounterNormals;
use breuer_major::spectral::HermiteAmplitude;
use breuer_major::variance::{c_g_levels, QuadratureSpec};
use breuer_major::{
    c_g, chaos_coefficients, check_c1, pair_expectation, psi, v_limit, v_s, whiten, CovarianceModel,
    Error, Functional, FunctionalSpec, MultiIndex, SpectralModel,
};
use common::Uniform;
use nalgebra::{dmatrix, DMatrix, DVector};
use proptest::prelude::*;

fn k(x: f64) -> f64 {
    (-0.5 * x * x).exp()
}

fn gaussian1() -> CovarianceModel {
    CovarianceModel::gaussian(1, vec![1.0]).unwrap()
}

/// Draws `count` vectors with covariance `cov` by Cholesky.
fn gaussian_draws(cov: &DMatrix<f64>, count: usize, seed: u64) -> Vec<DVector<f64>> {
    let l = cov.clone().cholesky().expect("covariance must be PD").l();
    let d = cov.nrows();
    let mut g = CounterNormals::new(seed);
    (0..count)
        .map(|i| {
            let z = DVector::from_fn(d, |j, _| g.normal((i * d + j) as u64));
            &l * z
        })
        .collect()
}

fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (v / n).sqrt())
}

#[test]
fn eval_r_examples() {
    let r = gaussian1().eval_r(&[1.0]).unwrap();
    assert!((r[(0, 0)] - (-0.5f64).exp()).abs() < 1e-15);
    let m = CovarianceModel::gaussian(2, vec![1.0, 2.0]).unwrap();
    let r = m.eval_r(&[1.0, 1.0]).unwrap();
    assert!((r[(0, 0)] - (-1.0f64).exp()).abs() < 1e-15);
    assert!((r[(1, 1)] - (-0.25f64).exp()).abs() < 1e-15);
    assert_eq!(r[(0, 1)], 0.0);
    assert!(matches!(m.eval_r(&[1.0]), Err(Error::DimensionMismatch { .. })));
    let t = CovarianceModel::triangular(1, vec![2.0]).unwrap();
    assert_eq!(t.eval_r(&[3.0]).unwrap()[(0, 0)], 0.0);
    assert!((t.eval_r(&[0.5]).unwrap()[(0, 0)] - 0.75).abs() < 1e-15);
}

#[test]
fn whiten_scalar_model() {
    let raw = CovarianceModel::custom(1, 1, 10.0, "4exp", |x: &[f64]| {
        DMatrix::from_element(1, 1, 4.0 * (-x[0] * x[0]).exp())
    })
    .unwrap();
    assert!(!raw.is_whitened());
    let g = Functional::new(1, "x", |x| x[0]);
    let (w, gw) = whiten(&raw, &g).unwrap();
    assert!(w.is_whitened());
    assert!((w.eval_r(&[0.7]).unwrap()[(0, 0)] - (-0.49f64).exp()).abs() < 1e-14);
    assert!((gw.eval(&[1.5]) - 3.0).abs() < 1e-14);
    // Whitening is idempotent.
    let (w2, gw2) = whiten(&w, &gw).unwrap();
    assert!((w2.eval_r(&[0.3]).unwrap() - w.eval_r(&[0.3]).unwrap()).abs().max() < 1e-15);
    assert_eq!(gw2.eval(&[0.4]), gw.eval(&[0.4]));
}

fn correlated_pair() -> CovarianceModel {
    CovarianceModel::custom(1, 2, 12.0, "corr", |x: &[f64]| {
        dmatrix![1.0, 0.5; 0.5, 1.0] * k(x[0])
    })
    .unwrap()
}

#[test]
fn whitening_preserves_the_law_of_g() {
    let raw = correlated_pair();
    let g = FunctionalSpec::Product { i: 0, j: 1 }.build(2).unwrap();
    let (model, gw) = whiten(&raw, &g).unwrap();
    let e = chaos_coefficients(&gw, 2, 32).unwrap();
    // E[ξ1 ξ2] = 0.5 is removed as level 0.
    assert!((e.mean() - 0.5).abs() < 1e-12);

    // C_G(x) = r11 r22 + r12 r21 = 1.25 e^{-x²} in the original coordinates.
    let analytic = |x: f64| 1.25 * (-x * x).exp();
    for &x in &[0.0, 0.5, 1.0, 2.0] {
        let got = c_g(&e, &model, &[x]).unwrap();
        assert!((got - analytic(x)).abs() < 1e-10, "x={x}: {got}");
    }

    // Monte Carlo of C_G on the raw field: (ξ(x), ξ(0)) jointly.
    let r0 = raw.eval_r(&[0.0]).unwrap();
    for (i, &x) in [0.0, 0.5, 1.0].iter().enumerate() {
        let rx = raw.eval_r(&[x]).unwrap();
        let mut cov = DMatrix::zeros(4, 4);
        cov.view_mut((0, 0), (2, 2)).copy_from(&r0);
        cov.view_mut((2, 2), (2, 2)).copy_from(&r0);
        cov.view_mut((0, 2), (2, 2)).copy_from(&rx);
        cov.view_mut((2, 0), (2, 2)).copy_from(&rx.transpose());
        // Jitter only matters at x = 0, where the two halves coincide.
        let cov = cov + DMatrix::identity(4, 4) * 1e-12;
        let prods: Vec<f64> = gaussian_draws(&cov, 200_000, 77 + i as u64)
            .iter()
            .map(|v| (v[0] * v[1] - 0.5) * (v[2] * v[3] - 0.5))
            .collect();
        let (m, se) = mean_and_se(&prods);
        assert!((m - analytic(x)).abs() < 4.0 * se, "x={x}: {m} ± {se}");
    }

    let report = v_limit(&e, &model, model.decay_radius).unwrap();
    assert!((report.v - 1.25 * PI.sqrt()).abs() < 1e-6, "{}", report.v);
}

/// `ξ1 = η(x)`, `ξ2(x) = (η(x+1) - η(x-1)) / c` with `η` of covariance `k`.
fn asymmetric_model() -> CovarianceModel {
    let c = (2.0 - 2.0 * k(2.0)).sqrt();
    CovarianceModel::custom(1, 2, 14.0, "asym", move |x: &[f64]| {
        let x = x[0];
        dmatrix![
            k(x), (k(x - 1.0) - k(x + 1.0)) / c;
            (k(x + 1.0) - k(x - 1.0)) / c, (2.0 * k(x) - k(x + 2.0) - k(x - 2.0)) / (c * c)
        ]
    })
    .unwrap()
}

#[test]
fn lag_orientation_matches_simulation() {
    let model = asymmetric_model();
    assert!(model.is_whitened());
    let x = 0.7;
    let r = model.eval_r(&[x]).unwrap();
    assert!(r[(0, 1)].abs() > 0.1 && (r[(0, 1)] + r[(1, 0)]).abs() < 1e-15);
    // E[H̄_(2,0)(ξ(x)) H̄_(1,1)(ξ(0))] = 2 r11(x) r12(x).
    let a = MultiIndex::new(vec![2, 0]);
    let b = MultiIndex::new(vec![1, 1]);
    let ours = pair_expectation(&a, &b, &CrossCovarianceMatrix::new(r.clone()).unwrap()).unwrap();
    let flipped =
        pair_expectation(&a, &b, &CrossCovarianceMatrix::new(r.transpose()).unwrap()).unwrap();
    assert!((ours - 2.0 * r[(0, 0)] * r[(0, 1)]).abs() < 1e-14);

    // η at the points x, 0, 1, -1.
    let pts = [x, 0.0, 1.0, -1.0];
    let cov = DMatrix::from_fn(4, 4, |i, j| k(pts[i] - pts[j]));
    let c = (2.0 - 2.0 * k(2.0)).sqrt();
    let vals: Vec<f64> = gaussian_draws(&cov, 400_000, 9)
        .iter()
        .map(|v| {
            let (xi1_x, xi1_0, xi2_0) = (v[0], v[1], (v[2] - v[3]) / c);
            (xi1_x * xi1_x - 1.0) * xi1_0 * xi2_0
        })
        .collect();
    let (m, se) = mean_and_se(&vals);
    assert!((m - ours).abs() < 4.0 * se, "{m} ± {se} vs {ours}");
    assert!((m - flipped).abs() > 8.0 * se, "orientation not resolved");
}

#[test]
fn psi_and_c1_examples() {
    let g = gaussian1();
    assert!((psi(&g, &[0.0]).unwrap() - 1.0).abs() < 1e-15);
    let asym = asymmetric_model();
    let r = asym.eval_r(&[1.0]).unwrap();
    let want = (r[(0, 0)].abs() + r[(0, 1)].abs())
        .max(r[(1, 0)].abs() + r[(1, 1)].abs())
        .max(r[(0, 0)].abs() + r[(1, 0)].abs())
        .max(r[(0, 1)].abs() + r[(1, 1)].abs());
    assert!((psi(&asym, &[1.0]).unwrap() - want).abs() < 1e-15);

    let rep = check_c1(&g, 1, 10.0, 4001).unwrap();
    assert!(rep.pass);
    assert!((rep.psi_d_integral - (2.0 * PI).sqrt()).abs() < 1e-4);
    let tri = CovarianceModel::triangular(1, vec![1.0]).unwrap();
    let rep = check_c1(&tri, 2, 2.0, 4001).unwrap();
    assert!(rep.pass && rep.boundary_max == 0.0);
    assert!((rep.psi_d_integral - 2.0 / 3.0).abs() < 1e-5);
    let slow = CovarianceModel::custom(1, 1, 50.0, "slow", |x: &[f64]| {
        DMatrix::from_element(1, 1, (1.0 + x[0] * x[0]).powf(-0.3))
    })
    .unwrap();
    assert!(!check_c1(&slow, 1, 50.0, 4001).unwrap().pass);
}

#[test]
fn variance_examples() {
    let model = gaussian1();
    let h2 = FunctionalSpec::Hermite { axis: 0, degree: 2 }.build(1).unwrap();
    let e = chaos_coefficients(&h2, 4, 64).unwrap();
    let v = 2.0 * PI.sqrt();
    let spec = QuadratureSpec::for_dim(1);
    let vs: Vec<f64> = [5.0, 20.0, 50.0].iter().map(|&s| v_s(&e, &model, s, spec).unwrap()).collect();
    assert!(vs[0] < vs[1] && vs[1] < vs[2] && vs[2] < v);
    // V_s = 2√π - 1/s exactly for this kernel.
    for (s, got) in [5.0, 20.0, 50.0].iter().zip(&vs) {
        assert!((got - (v - 1.0 / s)).abs() < 1e-5, "s={s}: {got}");
    }
    assert!((vs[2] - v).abs() / v < 0.01);
    assert!(v_s(&e, &model, 1e-3, spec).unwrap().abs() < 1e-2);
    let lim = v_limit(&e, &model, model.decay_radius).unwrap();
    assert!((lim.v - 3.54491).abs() < 1e-3);

    let lin = FunctionalSpec::Linear { axis: 0 }.build(1).unwrap();
    let e1 = chaos_coefficients(&lin, 4, 64).unwrap();
    let lim = v_limit(&e1, &model, model.decay_radius).unwrap();
    assert!((lim.v - (2.0 * PI).sqrt()).abs() < 1e-6);

    let slow = CovarianceModel::custom(1, 1, 50.0, "slow", |x: &[f64]| {
        DMatrix::from_element(1, 1, (1.0 + x[0] * x[0]).powf(-0.3))
    })
    .unwrap();
    assert!(matches!(v_limit(&e1, &slow, 50.0), Err(Error::C1Failed(_))));
}

#[test]
fn level_contributions_are_nonnegative() {
    let model = whiten(&correlated_pair(), &Functional::new(2, "id", |x| x[0]))
        .unwrap()
        .0;
    let g = Functional::new(2, "mix", |x| (x[0] + 0.3 * x[1]).cos() + x[0] * x[1].powi(2));
    let e = chaos_coefficients(&g, 6, 32).unwrap();
    let rep = v_limit(&e, &model, model.decay_radius).unwrap();
    assert!(rep.per_level.len() >= 4);
    for l in &rep.per_level {
        assert!(l.value >= -1e-10, "level {}: {}", l.q, l.value);
    }
    // At the origin each level carries its chaos mass.
    for (q, c) in c_g_levels(&e, &model, &[0.0]).unwrap() {
        assert!((c - e.level_mass(q)).abs() < 1e-10 * e.level_mass(q).max(1.0));
    }
}

fn registry_models() -> Vec<CovarianceModel> {
    let sn = |orders: &[usize], lengths: &[f64]| {
        let amps = orders
            .iter()
            .zip(lengths)
            .map(|(&order, &length)| HermiteAmplitude { order, length })
            .collect();
        let spec = SpectralModel::single_noise_unmixed(1, amps).unwrap();
        CovarianceModel::from_spectral(spec).unwrap()
    };
    vec![
        CovarianceModel::gaussian(1, vec![1.0, 0.5]).unwrap(),
        CovarianceModel::exponential(1, vec![0.7]).unwrap(),
        CovarianceModel::triangular(1, vec![1.5, 0.6]).unwrap(),
        sn(&[0, 2], &[1.0, 1.0]),
        sn(&[0, 0], &[1.0, 2.0]),
        sn(&[0, 1, 3], &[1.0, 0.7, 1.3]),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn gram_matrices_are_psd(seed in any::<u64>()) {
        let mut rng = Uniform::new(seed);
        let pts: Vec<f64> = (0..6).map(|_| rng.range(-3.0, 3.0)).collect();
        for model in registry_models() {
            let m = model.m;
            let p = pts.len();
            let mut gram = DMatrix::zeros(p * m, p * m);
            for a in 0..p {
                for b in 0..p {
                    let r = model.eval_r(&[pts[a] - pts[b]]).unwrap();
                    gram.view_mut((a * m, b * m), (m, m)).copy_from(&r);
                }
            }
            let sym = 0.5 * (&gram + gram.transpose());
            let min = sym.symmetric_eigenvalues().min();
            prop_assert!(min > -1e-8, "{}: {min:e}", model.label);
        }
    }

    #[test]
    fn reflection_and_psi_dominance(x in -6.0f64..6.0) {
        for model in registry_models() {
            let g = Functional::new(model.m, "first", |v| v[0]);
            let (w, _) = whiten(&model, &g).unwrap();
            let r = w.eval_r(&[x]).unwrap();
            let rm = w.eval_r(&[-x]).unwrap();
            prop_assert!((&r - rm.transpose()).abs().max() < 1e-12, "{}", model.label);
            let p = psi(&w, &[x]).unwrap();
            prop_assert!(r.abs().max() <= p + 1e-15);
            prop_assert!(p <= psi(&w, &[0.0]).unwrap() * (w.m as f64) + 1e-12);
        }
    }

    #[test]
    fn whitening_is_idempotent(x in -4.0f64..4.0) {
        for model in registry_models() {
            let g = Functional::new(model.m, "sum", |v| v.iter().sum());
            let (w1, g1) = whiten(&model, &g).unwrap();
            let (w2, g2) = whiten(&w1, &g1).unwrap();
            let r0 = w1.eval_r(&[0.0]).unwrap();
            prop_assert!((r0 - DMatrix::identity(w1.m, w1.m)).abs().max() < 1e-9);
            prop_assert!((w1.eval_r(&[x]).unwrap() - w2.eval_r(&[x]).unwrap()).abs().max() < 1e-14);
            let y = vec![x; model.m];
            prop_assert!((g1.eval(&y) - g2.eval(&y)).abs() < 1e-14);
        }
    }
}
