use std::f64::consts::PI;

use breuer_major::harness::{
    brownian_paths, clt_test_values, compute_l_s_levels, covariance_table, dyadic_grid,
    dyadic_pairs, Thresholds,
};
use breuer_major::rng::CounterNormals;
use breuer_major::spectral::HermiteAmplitude;
use breuer_major::stats::{jackknife_mean, sample_variance};
use breuer_major::{
    chaos_coefficients, clt_test, compute_l_s, compute_z_path, increment_test, simulate,
    BMObservation, Error, FieldSample, Functional, FunctionalSpec, GridSpec, SpectralModel,
};

fn ones(n: usize, s: f64, pts: usize) -> FieldSample {
    let grid = GridSpec::new(n, s, pts).unwrap();
    FieldSample {
        grid,
        m: 1,
        values: vec![1.0; grid.sites()],
        seed: 0,
        model_id: "ones".into(),
        max_imag_residue: 0.0,
    }
}

fn first() -> Functional {
    Functional::new(1, "x", |x| x[0])
}

#[test]
fn constant_field_examples() {
    // All sites: h·16 / √16 = 4.
    let f = ones(1, 8.0, 16);
    assert!((compute_l_s(&f, &first(), 0.0, 8.0).unwrap().l_s - 4.0).abs() < 1e-12);
    // Half window: 8 sites of width 1, normalized by √8.
    assert!((compute_l_s(&f, &first(), 0.0, 4.0).unwrap().l_s - 8f64.sqrt()).abs() < 1e-12);
    // Centering removes the constant.
    assert!(compute_l_s(&f, &first(), 1.0, 8.0).unwrap().l_s.abs() < 1e-15);
    // n = 2: (2s)^{n/2} = 16.
    let f2 = ones(2, 8.0, 32);
    assert!((compute_l_s(&f2, &first(), 0.0, 8.0).unwrap().l_s - 16.0).abs() < 1e-10);
    assert!(matches!(compute_l_s(&f, &first(), 0.0, 9.0), Err(Error::Grid(_))));
}

#[test]
fn path_endpoints_and_nesting() {
    let spec = SpectralModel::single_noise_unmixed(2, vec![HermiteAmplitude::gaussian(1.0)]).unwrap();
    let grid = GridSpec::new(2, 8.0, 64).unwrap();
    let g = FunctionalSpec::Hermite { axis: 0, degree: 2 }.build(1).unwrap();
    // Half-widths 8·√y land on multiples of h = 0.25.
    let ys = [0.0, 0.25, 0.5625, 1.0];
    for seed in 0..5 {
        let f = simulate(&spec, &grid, seed).unwrap();
        let path = compute_z_path(&f, &g, 0.0, 8.0, &ys).unwrap();
        assert_eq!(path.z[0], 0.0);
        let l = compute_l_s(&f, &g, 0.0, 8.0).unwrap().l_s;
        assert!((path.z[3] - l).abs() < 1e-12 * l.abs().max(1.0));
        for (k, &y) in ys.iter().enumerate().skip(1) {
            let sp = 8.0 * y.sqrt();
            let inner = compute_l_s(&f, &g, 0.0, sp).unwrap().l_s;
            // Z_{s,y} = (2s'/2s)^{n/2} L_{s'}, here with n = 2.
            let want = inner * sp / 8.0;
            assert!((path.z[k] - want).abs() < 1e-12 * want.abs().max(1.0), "y={y}");
        }
    }
    // y beyond the sample domain.
    let f = simulate(&spec, &grid, 0).unwrap();
    assert!(compute_z_path(&f, &g, 0.0, 4.0, &[0.5, 4.5]).is_err());
    assert!(compute_z_path(&f, &g, 0.0, 4.0, &[0.5, 0.25]).is_err());
}

fn gaussian_1d() -> SpectralModel {
    SpectralModel::single_noise_unmixed(1, vec![HermiteAmplitude::gaussian(1.0)]).unwrap()
}

#[test]
fn hermite_two_monte_carlo() {
    let spec = gaussian_1d();
    let grid = GridSpec::new(1, 100.0, 512).unwrap();
    assert!(grid.nyquist() >= spec.t_max);
    let g = FunctionalSpec::Hermite { axis: 0, degree: 2 }.build(1).unwrap();
    let ys = dyadic_grid(2);
    let paths: Vec<_> = (0..2000)
        .map(|seed| {
            let f = simulate(&spec, &grid, 50_000 + seed).unwrap();
            compute_z_path(&f, &g, 0.0, 100.0, &ys).unwrap()
        })
        .collect();
    let v = 2.0 * PI.sqrt();
    let finals: Vec<f64> = paths.iter().map(|p| *p.z.last().unwrap()).collect();
    let var = sample_variance(&finals);
    assert!((var - v).abs() < 0.1 * v, "{var}");
    let (m, se) = jackknife_mean(&finals);
    assert!(m.abs() < 4.0 * se);
    let cells = covariance_table(&paths, v, &[(0.25, 1.0)], Thresholds::default()).unwrap();
    assert!(cells[0].pass, "{:?}", cells[0]);
}

#[test]
fn uncentered_functional_is_centered_by_its_mean() {
    let spec = gaussian_1d();
    let grid = GridSpec::new(1, 50.0, 256).unwrap();
    let g = Functional::new(1, "x^2", |x| x[0] * x[0]);
    let g0 = chaos_coefficients(&g, 2, 16).unwrap().mean();
    assert!((g0 - 1.0).abs() < 1e-12);
    let ls: Vec<f64> = (0..400)
        .map(|seed| compute_l_s(&simulate(&spec, &grid, seed).unwrap(), &g, g0, 50.0).unwrap().l_s)
        .collect();
    let (m, se) = jackknife_mean(&ls);
    assert!(m.abs() < 4.0 * se, "{m} ± {se}");
}

#[test]
fn truncated_chaos_is_close_to_the_full_sum() {
    let spec = gaussian_1d();
    let grid = GridSpec::new(1, 50.0, 256).unwrap();
    let g = FunctionalSpec::AbsCentered { axis: 0 }.build(1).unwrap();
    let e = chaos_coefficients(&g, 4, 64).unwrap();
    // Levels above 4 have covariance at most (their mass)·ψ, and ∫ψ = √(2π).
    let bound = e.residual_mass() * (2.0 * PI).sqrt();
    let sq: Vec<f64> = (0..300)
        .map(|seed| {
            let f = simulate(&spec, &grid, seed).unwrap();
            let o = compute_l_s_levels(&f, &g, 0.0, 50.0, &e).unwrap();
            let parts: f64 = o.per_level.unwrap().iter().map(|(_, v)| v).sum();
            (o.l_s - parts).powi(2)
        })
        .collect();
    let (ms, se) = jackknife_mean(&sq);
    assert!(ms <= bound + 3.0 * se, "E resid² = {ms} ± {se}, bound {bound}");
    assert!(ms > 0.0);
}

fn normals(count: usize, sd: f64, seed: u64) -> Vec<f64> {
    let mut g = CounterNormals::new(seed);
    (0..count).map(|k| sd * g.normal(k as u64)).collect()
}

#[test]
fn null_calibration() {
    let v: f64 = 2.5;
    let passes = (0..100)
        .filter(|&seed| {
            clt_test_values(&normals(1000, v.sqrt(), 700 + seed), v, Thresholds::default())
                .unwrap()
                .pass
        })
        .count();
    assert!(passes >= 98, "{passes}/100");
    // Wrong variance, wrong shape, and a degenerate sample all fail.
    assert!(!clt_test_values(&normals(1000, 2.0, 1), v, Thresholds::default()).unwrap().pass);
    let uniform: Vec<f64> = normals(1000, 1.0, 2)
        .iter()
        .map(|x| (v * 12.0).sqrt() * (breuer_major::stats::normal_cdf(*x) - 0.5))
        .collect();
    assert!(!clt_test_values(&uniform, v, Thresholds::default()).unwrap().pass);
    let zeros = vec![BMObservation { seed: 0, s: 1.0, l_s: 0.0, per_level: None }; 600];
    assert!(!clt_test(&zeros, v, Thresholds::default()).unwrap().pass);
    assert!(matches!(
        clt_test_values(&normals(100, 1.0, 3), 1.0, Thresholds::default()),
        Err(Error::InsufficientReplicates { .. })
    ));
}

#[test]
fn increment_test_contract() {
    let ys = dyadic_grid(3);
    let paths = brownian_paths(2000, &ys, 1.7, 99).unwrap();
    let t = Thresholds::default();
    let rep = increment_test(&paths, 3.0, &dyadic_pairs(3), f64::INFINITY, t).unwrap();
    let inc = rep.increments.as_ref().unwrap();
    assert!(inc.spread < 1.5, "{}", inc.spread);
    assert_eq!(inc.ratios.len(), 2 + 4 + 8);
    // E|N(0, V)|³ = 2√(2/π) V^{3/2}.
    let want = 2.0 * (2.0 / PI).sqrt() * 1.7f64.powf(1.5);
    assert!((inc.median - want).abs() < 0.1 * want);

    assert!(matches!(
        increment_test(&paths, 2.0, &dyadic_pairs(3), f64::INFINITY, t),
        Err(Error::UnsupportedMoment { .. })
    ));
    assert!(matches!(
        increment_test(&paths, 5.0, &dyadic_pairs(3), 4.0, t),
        Err(Error::UnsupportedMoment { .. })
    ));
    assert!(matches!(
        increment_test(&paths[..100], 3.0, &dyadic_pairs(3), f64::INFINITY, t),
        Err(Error::InsufficientReplicates { .. })
    ));
    let rep = increment_test(&paths, 3.0, &[(0.5, 0.5), (0.0, 1.0)], f64::INFINITY, t).unwrap();
    assert_eq!(rep.increments.unwrap().skipped_pairs, 1);
    assert!(increment_test(&paths, 3.0, &[(0.3, 1.0)], f64::INFINITY, t).is_err());
}
