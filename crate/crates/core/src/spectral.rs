//! Spectral descriptions of jointly stationary real Gaussian vector fields.
//!
//! Convention: the spectral density `f` satisfies `r(x) = ∫ e^{i⟨t,x⟩} f(t) dt`
//! with no `2π` prefactor, and a single-noise amplitude `α` satisfies
//! `f_{jk} = α_j α_k`. The forward Fourier transform is `∫ e^{-i⟨t,x⟩} · dx`.
//!
//! Single-noise amplitudes are built from separable Hermite functions:
//! channel `u` of the base family is `a_u(t) = Π_d √ℓ ψ_k(ℓ t_d)` with
//! `ℓ = λ/√2`, where `ψ_k` is the L²-normalized Hermite function. For `k = 0`
//! this gives `r(x) = exp(-‖x‖²/(2λ²))`. The field amplitude is `α = M a`
//! for a mixing matrix `M`.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc_inv;

use crate::error::{Error, Result};
use crate::numeric::{factorial, pairwise_sum};

/// Tail mass of `f_jj` allowed beyond `T_max`.
pub const SPECTRAL_TAIL_MASS: f64 = 1e-8;
pub const MAX_SPATIAL_DIM: usize = 3;

/// `√ℓ ψ_order(ℓ t)` per spatial axis with `ℓ = length/√2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HermiteAmplitude {
    pub order: usize,
    pub length: f64,
}

impl HermiteAmplitude {
    pub fn gaussian(length: f64) -> Self {
        HermiteAmplitude { order: 0, length }
    }

    fn scale(&self) -> f64 {
        self.length / std::f64::consts::SQRT_2
    }

    /// One-axis factor at frequency `t`.
    pub fn eval_1d(&self, t: f64) -> f64 {
        let l = self.scale();
        l.sqrt() * hermite_function(self.order, l * t)
    }

    pub fn eval(&self, t: &[f64]) -> f64 {
        t.iter().map(|&ti| self.eval_1d(ti)).product()
    }

    /// Frequency beyond which `|a|` is below `1e-25`: nine units past the
    /// turning point `√(2k+1)` of `ψ_k`.
    fn support(&self) -> f64 {
        (((2 * self.order + 1) as f64).sqrt() + 9.0) / self.scale()
    }

    /// Frequency beyond which one axis carries less than `mass` of `a²`.
    fn cutoff(&self, mass: f64) -> f64 {
        let mut u = 0.0;
        while hermite_tail(self.order, u) > mass {
            u += 0.05;
        }
        u / self.scale()
    }
}

/// L²-normalized Hermite function `ψ_k(u) = (2^k k! √π)^{-1/2} H^{phys}_k(u) e^{-u²/2}`.
pub fn hermite_function(k: usize, u: f64) -> f64 {
    let psi0 = std::f64::consts::PI.powf(-0.25) * (-0.5 * u * u).exp();
    if k == 0 {
        return psi0;
    }
    let mut prev = psi0;
    let mut cur = std::f64::consts::SQRT_2 * u * psi0;
    for j in 1..k {
        let jf = j as f64;
        let next = (2.0 / (jf + 1.0)).sqrt() * u * cur - (jf / (jf + 1.0)).sqrt() * prev;
        prev = cur;
        cur = next;
    }
    cur
}

/// `∫_{|u|>cut} ψ_k(u)² du` by Simpson's rule.
fn hermite_tail(k: usize, cut: f64) -> f64 {
    let upper = cut + 40.0;
    let steps = 4000;
    let h = (upper - cut) / steps as f64;
    let terms: Vec<f64> = (0..=steps)
        .map(|i| {
            let w = if i == 0 || i == steps {
                1.0
            } else if i % 2 == 1 {
                4.0
            } else {
                2.0
            };
            let v = hermite_function(k, cut + i as f64 * h);
            w * v * v
        })
        .collect();
    2.0 * pairwise_sum(&terms) * h / 3.0
}

/// Generalized Laguerre polynomial `L_n^{(α)}(x)`.
fn laguerre(n: usize, alpha: f64, x: f64) -> f64 {
    if n == 0 {
        return 1.0;
    }
    let mut prev = 1.0;
    let mut cur = 1.0 + alpha - x;
    for k in 1..n {
        let kf = k as f64;
        let next = ((2.0 * kf + 1.0 + alpha - x) * cur - (kf + alpha) * prev) / (kf + 1.0);
        prev = cur;
        cur = next;
    }
    cur
}

/// `∫ e^{iux} ψ_a(u) ψ_b(u) du` for `a - b` even (real-valued).
fn hermite_pair_transform(a: usize, b: usize, x: f64) -> f64 {
    let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
    let d = hi - lo;
    debug_assert!(d % 2 == 0);
    let sign = if (d / 2) % 2 == 0 { 1.0 } else { -1.0 };
    let z = 0.5 * x * x;
    sign * (x / std::f64::consts::SQRT_2).powi(d as i32)
        * (factorial(lo) / factorial(hi)).sqrt()
        * (-0.5 * z).exp()
        * laguerre(lo, d as f64, z)
}

/// One-axis cross transform `∫ e^{itx} a_u(t) a_v(t) dt`.
fn amplitude_pair_transform(u: &HermiteAmplitude, v: &HermiteAmplitude, x: f64) -> f64 {
    if (u.length - v.length).abs() <= 1e-15 * u.length.max(v.length) {
        let l = u.scale();
        if (u.order + v.order) % 2 == 0 {
            return hermite_pair_transform(u.order, v.order, x / l);
        }
        return 0.0;
    }
    if u.order == 0 && v.order == 0 {
        let (lu, lv) = (u.length, v.length);
        let s = lu * lu + lv * lv;
        return (2.0 * lu * lv / s).sqrt() * (-x * x / s).exp();
    }
    // Mixed scales and orders: trapezoid rule (spectrally accurate for
    // Gaussian-decaying integrands).
    let cut = u.support().max(v.support()).max(1.0);
    let steps = (((cut * (x.abs() + 1.0)) * 8.0).ceil() as usize).max(4096);
    let h = 2.0 * cut / steps as f64;
    let terms: Vec<f64> = (0..=steps)
        .map(|i| {
            let t = -cut + i as f64 * h;
            let w = if i == 0 || i == steps { 0.5 } else { 1.0 };
            w * (t * x).cos() * u.eval_1d(t) * v.eval_1d(t)
        })
        .collect();
    pairwise_sum(&terms) * h
}

type DensityFn = Arc<dyn Fn(&[f64]) -> DMatrix<f64> + Send + Sync>;

#[derive(Clone)]
pub enum SpectralKind {
    /// `α(t) = M a(t)`; all channels share one complex white noise.
    SingleNoise {
        amplitudes: Vec<HermiteAmplitude>,
        mixing: DMatrix<f64>,
    },
    /// Real symmetric PSD density matrix `f(t)`, even in `t`, synthesized
    /// through a per-frequency factorization. `covariance` optionally gives
    /// the closed-form `r`.
    General {
        density: DensityFn,
        covariance: Option<DensityFn>,
    },
}

#[derive(Clone)]
pub struct SpectralModel {
    pub n: usize,
    pub m: usize,
    pub kind: SpectralKind,
    /// Frequency cutoff: `∫_{|t|_∞ > T_max} f_jj < 1e-8` for every `j`.
    pub t_max: f64,
    pub label: String,
}

impl fmt::Debug for SpectralModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut d = f.debug_struct("SpectralModel");
        d.field("n", &self.n)
            .field("m", &self.m)
            .field("t_max", &self.t_max)
            .field("label", &self.label);
        if let SpectralKind::SingleNoise { amplitudes, mixing } = &self.kind {
            d.field("amplitudes", amplitudes).field("mixing", mixing);
        }
        d.finish()
    }
}

impl SpectralModel {
    /// Single-noise model with `α = mixing · a`.
    pub fn single_noise(
        n: usize,
        amplitudes: Vec<HermiteAmplitude>,
        mixing: DMatrix<f64>,
    ) -> Result<Self> {
        check_spatial_dim(n)?;
        if amplitudes.is_empty() || mixing.ncols() != amplitudes.len() {
            return Err(Error::Spectral(format!(
                "mixing has {} columns for {} base amplitudes",
                mixing.ncols(),
                amplitudes.len()
            )));
        }
        for a in &amplitudes {
            if a.length <= 0.0 || !a.length.is_finite() {
                return Err(Error::Spectral(format!("invalid length {}", a.length)));
            }
        }
        let m = mixing.nrows();
        let row_norm = (0..m)
            .map(|j| mixing.row(j).norm_squared())
            .fold(0.0, f64::max)
            .max(1e-300);
        let per_axis = SPECTRAL_TAIL_MASS / (n as f64 * amplitudes.len() as f64 * row_norm);
        let t_max = amplitudes
            .iter()
            .map(|a| a.cutoff(per_axis))
            .fold(0.0, f64::max);
        let label = format!(
            "single-noise[{}]",
            amplitudes
                .iter()
                .map(|a| format!("psi{}@{}", a.order, a.length))
                .collect::<Vec<_>>()
                .join(",")
        );
        Ok(SpectralModel {
            n,
            m,
            kind: SpectralKind::SingleNoise { amplitudes, mixing },
            t_max,
            label,
        })
    }

    /// Channels driven directly by the base amplitudes (`M = Id`).
    pub fn single_noise_unmixed(n: usize, amplitudes: Vec<HermiteAmplitude>) -> Result<Self> {
        let p = amplitudes.len();
        Self::single_noise(n, amplitudes, DMatrix::identity(p, p))
    }

    /// Independent channels with `r_jj(x) = exp(-‖x‖²/(2λ_j²))`.
    pub fn independent_gaussian(n: usize, lengths: Vec<f64>) -> Result<Self> {
        check_spatial_dim(n)?;
        if lengths.iter().any(|&l| l <= 0.0 || !l.is_finite()) {
            return Err(Error::Spectral("lengths must be positive".into()));
        }
        let m = lengths.len();
        let z = std::f64::consts::SQRT_2 * erfc_inv(SPECTRAL_TAIL_MASS / n as f64);
        let t_max = lengths.iter().map(|&l| z / l).fold(0.0, f64::max);
        let dl = lengths.clone();
        let density: DensityFn = Arc::new(move |t: &[f64]| {
            let mut f = DMatrix::zeros(dl.len(), dl.len());
            for (j, &l) in dl.iter().enumerate() {
                f[(j, j)] = t
                    .iter()
                    .map(|&ti| l / (2.0 * std::f64::consts::PI).sqrt() * (-0.5 * l * l * ti * ti).exp())
                    .product();
            }
            f
        });
        let cl = lengths.clone();
        let covariance: DensityFn = Arc::new(move |x: &[f64]| {
            let r2: f64 = x.iter().map(|v| v * v).sum();
            DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
                cl.len(),
                cl.iter().map(|&l| (-r2 / (2.0 * l * l)).exp()),
            ))
        });
        Ok(SpectralModel {
            n,
            m,
            kind: SpectralKind::General {
                density,
                covariance: Some(covariance),
            },
            t_max,
            label: format!("independent-gaussian{lengths:?}"),
        })
    }

    /// General PSD density with user-declared cutoff.
    pub fn general<F>(n: usize, m: usize, t_max: f64, density: F) -> Result<Self>
    where
        F: Fn(&[f64]) -> DMatrix<f64> + Send + Sync + 'static,
    {
        check_spatial_dim(n)?;
        Ok(SpectralModel {
            n,
            m,
            kind: SpectralKind::General {
                density: Arc::new(density),
                covariance: None,
            },
            t_max,
            label: "general".into(),
        })
    }

    pub fn is_single_noise(&self) -> bool {
        matches!(self.kind, SpectralKind::SingleNoise { .. })
    }

    /// Number of independent complex noises per frequency.
    pub fn noise_count(&self) -> usize {
        match &self.kind {
            SpectralKind::SingleNoise { .. } => 1,
            SpectralKind::General { .. } => self.m,
        }
    }

    /// `α(t)`; only defined for single-noise models.
    pub fn alpha(&self, t: &[f64]) -> Result<Vec<f64>> {
        match &self.kind {
            SpectralKind::SingleNoise { amplitudes, mixing } => {
                let base: Vec<f64> = amplitudes.iter().map(|a| a.eval(t)).collect();
                Ok((0..self.m)
                    .map(|j| (0..base.len()).map(|u| mixing[(j, u)] * base[u]).sum())
                    .collect())
            }
            SpectralKind::General { .. } => Err(Error::Spectral(
                "amplitude α is only defined for single-noise models".into(),
            )),
        }
    }

    /// Cross-spectral density matrix `f(t)`.
    pub fn density(&self, t: &[f64]) -> DMatrix<f64> {
        match &self.kind {
            SpectralKind::SingleNoise { .. } => {
                let a = nalgebra::DVector::from_vec(self.alpha(t).expect("single noise"));
                &a * a.transpose()
            }
            SpectralKind::General { density, .. } => density(t),
        }
    }

    /// Per-frequency factor `L(t)` (`m × noise_count`) with `L Lᵀ = f(t)`.
    /// Eigenvalues below `-1e-10` are rejected.
    pub fn factor(&self, t: &[f64]) -> Result<DMatrix<f64>> {
        match &self.kind {
            SpectralKind::SingleNoise { .. } => {
                Ok(DMatrix::from_vec(self.m, 1, self.alpha(t)?))
            }
            SpectralKind::General { density, .. } => psd_factor(&density(t), t),
        }
    }

    /// `r(x) = ∫ e^{i⟨t,x⟩} f(t) dt`.
    pub fn covariance(&self, x: &[f64]) -> DMatrix<f64> {
        match &self.kind {
            SpectralKind::SingleNoise { amplitudes, mixing } => {
                let p = amplitudes.len();
                let mut base = DMatrix::zeros(p, p);
                for u in 0..p {
                    for v in u..p {
                        let val: f64 = x
                            .iter()
                            .map(|&xd| amplitude_pair_transform(&amplitudes[u], &amplitudes[v], xd))
                            .product();
                        base[(u, v)] = val;
                        base[(v, u)] = val;
                    }
                }
                mixing * base * mixing.transpose()
            }
            SpectralKind::General {
                covariance: Some(cov),
                ..
            } => cov(x),
            SpectralKind::General { density, .. } => {
                numeric_covariance(density.as_ref(), self.n, self.m, self.t_max, x)
            }
        }
    }

    /// Checks `r_jj(0) = ∫ f_jj = 1` to `1e-6`.
    pub fn check_normalized(&self) -> Result<()> {
        let r0 = self.covariance(&vec![0.0; self.n]);
        for j in 0..self.m {
            if (r0[(j, j)] - 1.0).abs() > 1e-6 {
                return Err(Error::Spectral(format!(
                    "unnormalized spectral model: ∫f_{j}{j} = {}",
                    r0[(j, j)]
                )));
            }
        }
        Ok(())
    }

    /// Applies `ξ ↦ W ξ`.
    pub fn transformed(&self, w: &DMatrix<f64>) -> Result<Self> {
        if w.ncols() != self.m {
            return Err(Error::DimensionMismatch {
                expected: self.m,
                got: w.ncols(),
            });
        }
        let kind = match &self.kind {
            SpectralKind::SingleNoise { amplitudes, mixing } => {
                return SpectralModel::single_noise(self.n, amplitudes.clone(), w * mixing).map(
                    |mut s| {
                        s.label = self.label.clone();
                        s
                    },
                );
            }
            SpectralKind::General {
                density,
                covariance,
            } => {
                let (d, w1) = (density.clone(), w.clone());
                let density: DensityFn = Arc::new(move |t: &[f64]| &w1 * d(t) * w1.transpose());
                let covariance = covariance.clone().map(|c| {
                    let w2 = w.clone();
                    let f: DensityFn = Arc::new(move |x: &[f64]| &w2 * c(x) * w2.transpose());
                    f
                });
                SpectralKind::General {
                    density,
                    covariance,
                }
            }
        };
        Ok(SpectralModel {
            n: self.n,
            m: w.nrows(),
            kind,
            t_max: self.t_max,
            label: self.label.clone(),
        })
    }
}

fn check_spatial_dim(n: usize) -> Result<()> {
    if n == 0 || n > MAX_SPATIAL_DIM {
        return Err(Error::UnsupportedDimension {
            what: "n",
            value: n,
            max: MAX_SPATIAL_DIM,
        });
    }
    Ok(())
}

/// Symmetric PSD square-root factor via eigendecomposition.
pub(crate) fn psd_factor(f: &DMatrix<f64>, t: &[f64]) -> Result<DMatrix<f64>> {
    let sym = 0.5 * (f + f.transpose());
    let eig = SymmetricEigen::new(sym);
    let min = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    if min < -1e-10 {
        return Err(Error::Spectral(format!(
            "density not PSD at t = {t:?} (eigenvalue {min:e})"
        )));
    }
    let sqrt = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&sqrt))
}

fn numeric_covariance(
    density: &(dyn Fn(&[f64]) -> DMatrix<f64> + Send + Sync),
    n: usize,
    m: usize,
    t_max: f64,
    x: &[f64],
) -> DMatrix<f64> {
    let xmax = x.iter().map(|v| v.abs()).fold(0.0, f64::max);
    let per_axis = ((t_max * (xmax + 1.0) * 4.0).ceil() as usize)
        .clamp(256, if n == 1 { 1 << 16 } else { 256 });
    let h = 2.0 * t_max / per_axis as f64;
    let points = per_axis + 1;
    let total = points.pow(n as u32);
    let mut acc = DMatrix::zeros(m, m);
    let mut idx = vec![0usize; n];
    let mut t = vec![0.0; n];
    for flat in 0..total {
        crate::numeric::unravel(flat, points, n, &mut idx);
        let mut w = h.powi(n as i32);
        let mut phase = 0.0;
        for d in 0..n {
            t[d] = -t_max + idx[d] as f64 * h;
            if idx[d] == 0 || idx[d] == per_axis {
                w *= 0.5;
            }
            phase += t[d] * x[d];
        }
        acc += density(&t) * (w * phase.cos());
    }
    acc
}
