//! Breuer–Major functionals of simulated fields and their statistical checks.
//!
//! `L_s = (2s)^{-n/2} h^n Σ_g [G(ξ(x_g)) − G0]` over grid sites in `[-s,s]^n`,
//! and `Z_{s,y}` is the same sum over the box of half-width `s·y^{1/n}`.
//!
//! Box membership: grid sites are cell centres, and a site belongs to the box
//! of half-width `a` when `max_i |x_i| ≤ a` (with a `1e-9·h` tolerance for
//! ties). When `a` is a multiple of `h` this picks exactly `2a/h` sites per
//! axis, so the discrete box has the same volume as the continuous one.
//!
//! Functional convergence is only checked on a finite `y` grid in `[0, 1]`.

use std::io::Write;

use serde::Serialize;

use crate::chaos::{evaluate_g_q, ChaosExpansion};
use crate::error::{Error, Result};
use crate::functional::Functional;
use crate::numeric::{pairwise_sum, unravel};
use crate::rng::CounterNormals;
use crate::simulate::FieldSample;
use crate::stats::{jackknife, ks_normal, mean, median, KsResult};

pub const MIN_CLT_REPLICATES: usize = 500;
pub const MIN_INCREMENT_PATHS: usize = 500;
const TIE_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Serialize)]
pub struct BMObservation {
    pub seed: u64,
    pub s: f64,
    #[serde(rename = "L_s")]
    pub l_s: f64,
    /// `(q, L_s^{(q)})`
    #[serde(skip_serializing_if = "Option::is_none")]
    pub per_level: Option<Vec<(usize, f64)>>,
}

#[derive(Debug, Clone, Serialize)]
pub struct BMPath {
    pub seed: u64,
    pub s: f64,
    pub y_grid: Vec<f64>,
    pub z: Vec<f64>,
}

impl BMPath {
    pub fn at(&self, y: f64) -> Option<f64> {
        self.y_grid
            .iter()
            .position(|&v| (v - y).abs() <= 1e-12)
            .map(|i| self.z[i])
    }
}

/// Thresholds behind every pass flag; all are echoed into reports.
#[derive(Debug, Clone, Copy, Serialize, serde::Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct Thresholds {
    /// Sample variance must lie in `V ± k·V·√(2/N)`.
    pub variance_band_sigmas: f64,
    /// KS statistic must be below `c/√N`.
    pub ks_coefficient: f64,
    /// `max/median` of increment moment ratios must be below this.
    pub increment_spread: f64,
    /// Finite-dimensional covariances must be within this many standard errors.
    pub covariance_sigmas: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds {
            variance_band_sigmas: 5.0,
            ks_coefficient: crate::stats::KS_CRITICAL_1PCT,
            increment_spread: 3.0,
            covariance_sigmas: 3.0,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct VarianceCheck {
    pub target: f64,
    pub empirical: f64,
    pub stderr: f64,
    pub band: [f64; 2],
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct KsCheck {
    #[serde(flatten)]
    pub ks: KsResult,
    pub critical: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct CovarianceCell {
    pub y1: f64,
    pub y2: f64,
    pub empirical: f64,
    pub stderr: f64,
    pub target: f64,
    pub z_score: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct IncrementRatio {
    pub y1: f64,
    pub y2: f64,
    pub moment: f64,
    pub ratio: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct IncrementCheck {
    pub p: f64,
    pub ratios: Vec<IncrementRatio>,
    pub skipped_pairs: usize,
    pub max: f64,
    pub median: f64,
    pub spread: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct VerificationReport {
    pub samples: usize,
    pub mean: f64,
    pub mean_stderr: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub variance: Option<VarianceCheck>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ks: Option<KsCheck>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub covariance_table: Vec<CovarianceCell>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub increments: Option<IncrementCheck>,
    pub thresholds: Thresholds,
    pub pass: bool,
}

impl VerificationReport {
    fn empty(samples: usize, data: &[f64], thresholds: Thresholds) -> Self {
        let (m, se) = crate::stats::jackknife_mean(data);
        VerificationReport {
            samples,
            mean: m,
            mean_stderr: se,
            variance: None,
            ks: None,
            covariance_table: Vec::new(),
            increments: None,
            thresholds,
            pass: true,
        }
    }

    fn refresh(&mut self) {
        self.pass = self.variance.as_ref().is_none_or(|v| v.pass)
            && self.ks.as_ref().is_none_or(|k| k.pass)
            && self.covariance_table.iter().all(|c| c.pass)
            && self.increments.as_ref().is_none_or(|i| i.pass);
    }
}

/// `G(ξ(x_g)) − G0` at every site, in row-major site order.
pub fn site_values(sample: &FieldSample, g: &Functional, g0: f64) -> Result<Vec<f64>> {
    if g.m() != sample.m {
        return Err(Error::DimensionMismatch {
            expected: sample.m,
            got: g.m(),
        });
    }
    let sites = sample.grid.sites();
    let mut out = Vec::with_capacity(sites);
    for site in 0..sites {
        let v = g.eval(sample.site_vector(site)) - g0;
        if !v.is_finite() {
            return Err(Error::Evaluation {
                label: g.label().to_string(),
                node: sample.site_vector(site).to_vec(),
            });
        }
        out.push(v);
    }
    Ok(out)
}

/// `max_i |x_i|` for every site.
fn site_radii(sample: &FieldSample) -> Vec<f64> {
    let grid = &sample.grid;
    let mut idx = vec![0usize; grid.n];
    (0..grid.sites())
        .map(|site| {
            unravel(site, grid.points_per_axis, grid.n, &mut idx);
            idx.iter()
                .map(|&i| grid.coordinate(i).abs())
                .fold(0.0, f64::max)
        })
        .collect()
}

fn check_coverage(sample: &FieldSample, s: f64) -> Result<()> {
    if !(s > 0.0) || s > sample.grid.s * (1.0 + 1e-12) {
        return Err(Error::Grid(format!(
            "window half-width {s} is not covered by the sample grid of half-width {}",
            sample.grid.s
        )));
    }
    Ok(())
}

fn box_sum(values: &[f64], radii: &[f64], half_width: f64, tol: f64) -> f64 {
    let inside: Vec<f64> = values
        .iter()
        .zip(radii)
        .filter(|(_, &r)| r <= half_width + tol)
        .map(|(&v, _)| v)
        .collect();
    pairwise_sum(&inside)
}

fn normalization(sample: &FieldSample, s: f64) -> f64 {
    let n = sample.grid.n as i32;
    sample.grid.spacing().powi(n) / (2.0 * s).powf(n as f64 / 2.0)
}

pub fn compute_l_s(sample: &FieldSample, g: &Functional, g0: f64, s: f64) -> Result<BMObservation> {
    check_coverage(sample, s)?;
    let values = site_values(sample, g, g0)?;
    let radii = site_radii(sample);
    let tol = TIE_TOLERANCE * sample.grid.spacing();
    Ok(BMObservation {
        seed: sample.seed,
        s,
        l_s: normalization(sample, s) * box_sum(&values, &radii, s, tol),
        per_level: None,
    })
}

/// `L_s` together with `L_s^{(q)}` for each level of the expansion. The
/// expansion must describe `G` in the coordinates of the sample.
pub fn compute_l_s_levels(
    sample: &FieldSample,
    g: &Functional,
    g0: f64,
    s: f64,
    expansion: &ChaosExpansion,
) -> Result<BMObservation> {
    let mut obs = compute_l_s(sample, g, g0, s)?;
    let radii = site_radii(sample);
    let tol = TIE_TOLERANCE * sample.grid.spacing();
    let norm = normalization(sample, s);
    let mut per_level = Vec::new();
    for &q in expansion.levels.keys().filter(|&&q| q > 0) {
        let values = (0..sample.grid.sites())
            .map(|site| evaluate_g_q(expansion, q, sample.site_vector(site)))
            .collect::<Result<Vec<_>>>()?;
        per_level.push((q, norm * box_sum(&values, &radii, s, tol)));
    }
    obs.per_level = Some(per_level);
    Ok(obs)
}

/// `Z_{s,y}` for every `y` of an increasing grid in `[0, (S/s)^n]`, where `S`
/// is the half-width of the sample grid. One pass over the sites: each site
/// is bucketed by the first `y` whose box contains it, then buckets are
/// prefix-summed.
pub fn compute_z_path(
    sample: &FieldSample,
    g: &Functional,
    g0: f64,
    s: f64,
    y_grid: &[f64],
) -> Result<BMPath> {
    check_coverage(sample, s)?;
    validate_y_grid(y_grid, (sample.grid.s / s).powi(sample.grid.n as i32))?;
    let values = site_values(sample, g, g0)?;
    let radii = site_radii(sample);
    let tol = TIE_TOLERANCE * sample.grid.spacing();
    let n = sample.grid.n as f64;
    let widths: Vec<f64> = y_grid.iter().map(|&y| s * y.powf(1.0 / n)).collect();
    let mut buckets = vec![Vec::new(); y_grid.len()];
    for (v, r) in values.iter().zip(&radii) {
        if let Some(b) = widths.iter().position(|&w| *r <= w + tol) {
            buckets[b].push(*v);
        }
    }
    let norm = normalization(sample, s);
    let mut acc = 0.0;
    let z = buckets
        .iter()
        .map(|b| {
            acc += pairwise_sum(b);
            norm * acc
        })
        .collect();
    Ok(BMPath {
        seed: sample.seed,
        s,
        y_grid: y_grid.to_vec(),
        z,
    })
}

fn validate_y_grid(y_grid: &[f64], y_max: f64) -> Result<()> {
    if y_grid.is_empty() {
        return Err(Error::InvalidArgument("empty y grid".into()));
    }
    if y_grid.iter().any(|y| !y.is_finite() || *y < 0.0) {
        return Err(Error::InvalidArgument("y grid must be finite and non-negative".into()));
    }
    if y_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidArgument("y grid must be strictly increasing".into()));
    }
    let last = *y_grid.last().unwrap();
    if last > y_max * (1.0 + 1e-12) {
        return Err(Error::Grid(format!(
            "y = {last} exceeds the sample domain (maximum {y_max})"
        )));
    }
    Ok(())
}

/// `{j/2^k, (j+1)/2^k}` for `k = 1..=levels`.
pub fn dyadic_pairs(levels: u32) -> Vec<(f64, f64)> {
    let mut out = Vec::new();
    for k in 1..=levels {
        let d = (1u64 << k) as f64;
        for j in 0..(1u64 << k) {
            out.push((j as f64 / d, (j + 1) as f64 / d));
        }
    }
    out
}

/// `{j/2^levels : j = 0..=2^levels}`.
pub fn dyadic_grid(levels: u32) -> Vec<f64> {
    let d = (1u64 << levels) as f64;
    (0..=(1u64 << levels)).map(|j| j as f64 / d).collect()
}

/// Variance band and KS checks of `L_s` against `N(0, V)`.
pub fn clt_test(observations: &[BMObservation], v: f64, thresholds: Thresholds) -> Result<VerificationReport> {
    let data: Vec<f64> = observations.iter().map(|o| o.l_s).collect();
    clt_test_values(&data, v, thresholds)
}

pub fn clt_test_values(data: &[f64], v: f64, thresholds: Thresholds) -> Result<VerificationReport> {
    if data.len() < MIN_CLT_REPLICATES {
        return Err(Error::InsufficientReplicates {
            need: MIN_CLT_REPLICATES,
            got: data.len(),
        });
    }
    if !(v > 0.0 && v.is_finite()) {
        return Err(Error::InvalidArgument(format!("target variance must be positive, got {v}")));
    }
    let n = data.len() as f64;
    let mut report = VerificationReport::empty(data.len(), data, thresholds);
    let (var, var_se) = jackknife(data, crate::stats::sample_variance);
    let half = thresholds.variance_band_sigmas * v * (2.0 / n).sqrt();
    report.variance = Some(VarianceCheck {
        target: v,
        empirical: var,
        stderr: var_se,
        band: [v - half, v + half],
        pass: (var - v).abs() <= half,
    });
    let ks = ks_normal(data, v);
    let critical = thresholds.ks_coefficient / n.sqrt();
    report.ks = Some(KsCheck {
        pass: ks.statistic <= critical,
        critical,
        ks,
    });
    report.refresh();
    Ok(report)
}

fn sample_covariance(xs: &[f64], ys: &[f64]) -> f64 {
    let (mx, my) = (mean(xs), mean(ys));
    xs.iter()
        .zip(ys)
        .map(|(x, y)| (x - mx) * (y - my))
        .sum::<f64>()
        / (xs.len() as f64 - 1.0)
}

/// Jackknife estimates of `Cov(Z_{y1}, Z_{y2})` against `V·min(y1, y2)`.
pub fn covariance_table(
    paths: &[BMPath],
    v: f64,
    pairs: &[(f64, f64)],
    thresholds: Thresholds,
) -> Result<Vec<CovarianceCell>> {
    let mut out = Vec::with_capacity(pairs.len());
    for &(y1, y2) in pairs {
        let xs = column(paths, y1)?;
        let ys = column(paths, y2)?;
        let n = xs.len();
        // Jackknife over paired data, encoded as interleaved indices.
        let idx: Vec<f64> = (0..n).map(|i| i as f64).collect();
        let stat = |ix: &[f64]| {
            let a: Vec<f64> = ix.iter().map(|&i| xs[i as usize]).collect();
            let b: Vec<f64> = ix.iter().map(|&i| ys[i as usize]).collect();
            sample_covariance(&a, &b)
        };
        let (est, se) = jackknife(&idx, stat);
        let target = v * y1.min(y2);
        let z = (est - target) / se;
        out.push(CovarianceCell {
            y1,
            y2,
            empirical: est,
            stderr: se,
            target,
            z_score: z,
            pass: z.abs() <= thresholds.covariance_sigmas,
        });
    }
    Ok(out)
}

fn column(paths: &[BMPath], y: f64) -> Result<Vec<f64>> {
    paths
        .iter()
        .map(|p| {
            p.at(y)
                .ok_or_else(|| Error::InvalidArgument(format!("y = {y} is not on the path grid")))
        })
        .collect()
}

/// Moment ratios `E|Z_{y2} − Z_{y1}|^p / |y2 − y1|^{p/2}`; passes when
/// `max/median` stays below the configured spread.
pub fn increment_test(
    paths: &[BMPath],
    p: f64,
    pairs: &[(f64, f64)],
    declared_integrability: f64,
    thresholds: Thresholds,
) -> Result<VerificationReport> {
    if !(p > 2.0) || p > declared_integrability {
        return Err(Error::UnsupportedMoment {
            p,
            declared: declared_integrability,
        });
    }
    if paths.len() < MIN_INCREMENT_PATHS {
        return Err(Error::InsufficientReplicates {
            need: MIN_INCREMENT_PATHS,
            got: paths.len(),
        });
    }
    let mut ratios = Vec::new();
    let mut skipped = 0;
    for &(y1, y2) in pairs {
        if y1 == y2 {
            skipped += 1;
            continue;
        }
        let a = column(paths, y1)?;
        let b = column(paths, y2)?;
        let moments: Vec<f64> = a.iter().zip(&b).map(|(x, y)| (y - x).abs().powf(p)).collect();
        let moment = mean(&moments);
        ratios.push(IncrementRatio {
            y1,
            y2,
            moment,
            ratio: moment / (y2 - y1).abs().powf(p / 2.0),
        });
    }
    if ratios.is_empty() {
        return Err(Error::InvalidArgument("no non-degenerate increment pairs".into()));
    }
    let rs: Vec<f64> = ratios.iter().map(|r| r.ratio).collect();
    let max = rs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let med = median(&rs);
    let spread = max / med;
    let finals: Vec<f64> = paths.iter().map(|p| *p.z.last().unwrap()).collect();
    let mut report = VerificationReport::empty(paths.len(), &finals, thresholds);
    report.increments = Some(IncrementCheck {
        p,
        ratios,
        skipped_pairs: skipped,
        max,
        median: med,
        spread,
        pass: spread < thresholds.increment_spread,
    });
    report.refresh();
    Ok(report)
}

/// Exact `√V·B_y` on a grid, for calibrating [`increment_test`].
pub fn brownian_paths(count: usize, y_grid: &[f64], v: f64, seed: u64) -> Result<Vec<BMPath>> {
    validate_y_grid(y_grid, f64::INFINITY)?;
    let steps = y_grid.len();
    Ok((0..count)
        .map(|i| {
            let mut g = CounterNormals::with_stream(seed, i as u64);
            let mut z = Vec::with_capacity(steps);
            let mut acc = 0.0;
            let mut prev = 0.0;
            for (k, &y) in y_grid.iter().enumerate() {
                acc += (v * (y - prev)).sqrt() * g.normal(k as u64);
                prev = y;
                z.push(acc);
            }
            BMPath {
                seed: i as u64,
                s: f64::NAN,
                y_grid: y_grid.to_vec(),
                z,
            }
        })
        .collect())
}

pub fn write_observations_csv<W: Write>(observations: &[BMObservation], mut out: W) -> Result<()> {
    writeln!(out, "seed,s,L_s")?;
    for o in observations {
        writeln!(out, "{},{},{:.17e}", o.seed, o.s, o.l_s)?;
    }
    Ok(())
}

pub fn write_paths_csv<W: Write>(paths: &[BMPath], mut out: W) -> Result<()> {
    writeln!(out, "seed,s,y,Z")?;
    for p in paths {
        for (y, z) in p.y_grid.iter().zip(&p.z) {
            writeln!(out, "{},{},{},{:.17e}", p.seed, p.s, y, z)?;
        }
    }
    Ok(())
}
