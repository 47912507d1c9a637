//! Matrix-valued stationary covariances `r(x) = (r_{ij}(x))`, whitening,
//! the `ψ` majorant and a numerical certificate for `r_{jk} ∈ L^d`.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::functional::Functional;
use crate::numeric::{pairwise_sum, unravel};
use crate::spectral::{SpectralModel, MAX_SPATIAL_DIM};

/// Tolerance for `r(0) = Id`.
pub const WHITENED_TOL: f64 = 1e-12;
/// `‖r‖_max` allowed on the boundary of the truncation box.
pub const C1_BOUNDARY_THRESHOLD: f64 = 1e-6;
const MAX_CONDITION: f64 = 1e8;

type MatrixFn = Arc<dyn Fn(&[f64]) -> DMatrix<f64> + Send + Sync>;

#[derive(Clone)]
pub enum CovarianceKind {
    /// Independent channels, `r_jj(x) = exp(-‖x‖²/(2ℓ_j²))`.
    Gaussian { lengths: Vec<f64> },
    /// Independent channels, `r_jj(x) = exp(-‖x‖/ℓ_j)`.
    Exponential { lengths: Vec<f64> },
    /// Independent channels, `r_jj(x) = Π_d max(0, 1 - |x_d|/ℓ_j)`.
    Triangular { lengths: Vec<f64> },
    /// Cross-covariances induced by a single-noise spectral model.
    SingleNoise(SpectralModel),
    /// User-supplied `r`; joint positive definiteness is the caller's claim.
    Custom(MatrixFn),
}

#[derive(Clone)]
pub struct CovarianceModel {
    pub n: usize,
    pub m: usize,
    kind: CovarianceKind,
    /// `r'(x) = W r(x) Wᵀ` when present.
    mixing: Option<DMatrix<f64>>,
    whitened: bool,
    /// Radius beyond which `r` is declared negligible.
    pub decay_radius: f64,
    pub label: String,
}

impl fmt::Debug for CovarianceModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CovarianceModel")
            .field("label", &self.label)
            .field("n", &self.n)
            .field("m", &self.m)
            .field("whitened", &self.whitened)
            .field("decay_radius", &self.decay_radius)
            .field("mixing", &self.mixing)
            .finish()
    }
}

impl CovarianceModel {
    fn build(n: usize, m: usize, kind: CovarianceKind, decay_radius: f64, label: String) -> Result<Self> {
        if n == 0 || n > MAX_SPATIAL_DIM {
            return Err(Error::UnsupportedDimension {
                what: "n",
                value: n,
                max: MAX_SPATIAL_DIM,
            });
        }
        if m == 0 {
            return Err(Error::InvalidArgument("m must be positive".into()));
        }
        let mut model = CovarianceModel {
            n,
            m,
            kind,
            mixing: None,
            whitened: false,
            decay_radius,
            label,
        };
        model.whitened = model.r0_is_identity()?;
        Ok(model)
    }

    fn lengths_ok(lengths: &[f64]) -> Result<()> {
        if lengths.is_empty() || lengths.iter().any(|&l| !(l > 0.0 && l.is_finite())) {
            return Err(Error::InvalidArgument(format!("invalid length scales {lengths:?}")));
        }
        Ok(())
    }

    pub fn gaussian(n: usize, lengths: Vec<f64>) -> Result<Self> {
        Self::lengths_ok(&lengths)?;
        // exp(-R²/(2ℓ²)) < 1e-7
        let radius = lengths.iter().fold(0.0f64, |a, &l| a.max(l)) * (2.0 * 16.2f64).sqrt();
        let label = format!("gaussian{lengths:?}");
        Self::build(n, lengths.len(), CovarianceKind::Gaussian { lengths }, radius, label)
    }

    pub fn exponential(n: usize, lengths: Vec<f64>) -> Result<Self> {
        Self::lengths_ok(&lengths)?;
        let radius = lengths.iter().fold(0.0f64, |a, &l| a.max(l)) * 16.2;
        let label = format!("exponential{lengths:?}");
        Self::build(n, lengths.len(), CovarianceKind::Exponential { lengths }, radius, label)
    }

    pub fn triangular(n: usize, lengths: Vec<f64>) -> Result<Self> {
        Self::lengths_ok(&lengths)?;
        let radius = lengths.iter().fold(0.0f64, |a, &l| a.max(l)) * 1.25;
        let label = format!("triangular{lengths:?}");
        Self::build(n, lengths.len(), CovarianceKind::Triangular { lengths }, radius, label)
    }

    /// Covariance of a single-noise spectral model; the decay radius is where
    /// `‖r‖_max` falls below `1e-7` along the coordinate axes.
    pub fn from_spectral(spec: SpectralModel) -> Result<Self> {
        let (n, m) = (spec.n, spec.m);
        let mut radius = 1.0;
        loop {
            let mut x = vec![0.0; n];
            x[0] = radius;
            let big = spec.covariance(&x).abs().max();
            if big < 1e-7 || radius > 1e4 {
                break;
            }
            radius *= 1.25;
        }
        let label = spec.label.clone();
        Self::build(n, m, CovarianceKind::SingleNoise(spec), radius, label)
    }

    pub fn custom<F>(n: usize, m: usize, decay_radius: f64, label: impl Into<String>, r: F) -> Result<Self>
    where
        F: Fn(&[f64]) -> DMatrix<f64> + Send + Sync + 'static,
    {
        Self::build(n, m, CovarianceKind::Custom(Arc::new(r)), decay_radius, label.into())
    }

    pub fn with_decay_radius(mut self, radius: f64) -> Self {
        self.decay_radius = radius;
        self
    }

    pub fn kind(&self) -> &CovarianceKind {
        &self.kind
    }

    pub fn is_whitened(&self) -> bool {
        self.whitened
    }

    fn raw(&self, x: &[f64]) -> DMatrix<f64> {
        match &self.kind {
            CovarianceKind::Gaussian { lengths } => {
                let r2: f64 = x.iter().map(|v| v * v).sum();
                diag(lengths.iter().map(|&l| (-r2 / (2.0 * l * l)).exp()))
            }
            CovarianceKind::Exponential { lengths } => {
                let r = x.iter().map(|v| v * v).sum::<f64>().sqrt();
                diag(lengths.iter().map(|&l| (-r / l).exp()))
            }
            CovarianceKind::Triangular { lengths } => diag(
                lengths
                    .iter()
                    .map(|&l| x.iter().map(|&xd| (1.0 - xd.abs() / l).max(0.0)).product()),
            ),
            CovarianceKind::SingleNoise(spec) => spec.covariance(x),
            CovarianceKind::Custom(f) => f(x),
        }
    }

    /// `r(x)`.
    pub fn eval_r(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        if x.len() != self.n {
            return Err(Error::DimensionMismatch {
                expected: self.n,
                got: x.len(),
            });
        }
        let raw = self.raw(x);
        if raw.nrows() != self.m || raw.ncols() != self.m {
            return Err(Error::DimensionMismatch {
                expected: self.m,
                got: raw.nrows(),
            });
        }
        let r = match &self.mixing {
            Some(w) => w * raw * w.transpose(),
            None => raw,
        };
        if r.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteCovariance { lag: x.to_vec() });
        }
        Ok(r)
    }

    fn r0_is_identity(&self) -> Result<bool> {
        let r0 = self.eval_r(&vec![0.0; self.n])?;
        Ok((r0 - DMatrix::identity(self.m, self.m)).abs().max() <= WHITENED_TOL)
    }

    fn transformed(&self, w: &DMatrix<f64>) -> Result<Self> {
        let mut out = self.clone();
        match &self.kind {
            CovarianceKind::SingleNoise(spec) => {
                out.kind = CovarianceKind::SingleNoise(spec.transformed(w)?);
            }
            _ => {
                out.mixing = Some(match &self.mixing {
                    Some(prev) => w * prev,
                    None => w.clone(),
                });
            }
        }
        out.whitened = out.r0_is_identity()?;
        Ok(out)
    }

    /// Spectral description for field synthesis, when one is available.
    pub fn to_spectral(&self) -> Result<SpectralModel> {
        let base = match &self.kind {
            CovarianceKind::SingleNoise(spec) => spec.clone(),
            CovarianceKind::Gaussian { lengths } => {
                SpectralModel::independent_gaussian(self.n, lengths.clone())?
            }
            _ => {
                return Err(Error::Spectral(format!(
                    "no spectral synthesis for covariance model `{}`",
                    self.label
                )))
            }
        };
        match &self.mixing {
            Some(w) => base.transformed(w),
            None => Ok(base),
        }
    }
}

fn diag(values: impl Iterator<Item = f64>) -> DMatrix<f64> {
    let v: Vec<f64> = values.collect();
    DMatrix::from_diagonal(&nalgebra::DVector::from_vec(v))
}

/// Changes coordinates so that `r(0) = Id`: `r' = Σ^{-1/2} r Σ^{-1/2}` and
/// `G'(y) = G(Σ^{1/2} y)` with `Σ = r(0)` and symmetric square roots.
pub fn whiten(model: &CovarianceModel, g: &Functional) -> Result<(CovarianceModel, Functional)> {
    if g.m() != model.m {
        return Err(Error::DimensionMismatch {
            expected: model.m,
            got: g.m(),
        });
    }
    if model.whitened {
        return Ok((model.clone(), g.clone()));
    }
    let r0 = model.eval_r(&vec![0.0; model.n])?;
    let sigma = 0.5 * (&r0 + r0.transpose());
    let eig = SymmetricEigen::new(sigma);
    let min = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    let max = eig.eigenvalues.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(min > 0.0) || max / min >= MAX_CONDITION {
        return Err(Error::NotWhitenable(format!(
            "eigenvalues of r(0) span [{min:e}, {max:e}]"
        )));
    }
    let v = &eig.eigenvectors;
    let inv_sqrt = v * DMatrix::from_diagonal(&eig.eigenvalues.map(|l| 1.0 / l.sqrt())) * v.transpose();
    let sqrt = v * DMatrix::from_diagonal(&eig.eigenvalues.map(f64::sqrt)) * v.transpose();
    let mut out = model.transformed(&inv_sqrt)?;
    // Rounding in the square roots can leave r'(0) a few ulps away from Id.
    if !out.whitened {
        let r0 = out.eval_r(&vec![0.0; out.n])?;
        if (r0 - DMatrix::identity(out.m, out.m)).abs().max() <= 1e3 * WHITENED_TOL {
            out.whitened = true;
        }
    }
    Ok((out, g.compose_linear(&sqrt)))
}

/// `ψ(x) = max(max_i Σ_j |r_ij(x)|, max_j Σ_i |r_ij(x)|)`.
pub fn psi(model: &CovarianceModel, x: &[f64]) -> Result<f64> {
    if !model.whitened {
        return Err(Error::NotWhitened);
    }
    Ok(psi_of(&model.eval_r(x)?))
}

pub(crate) fn psi_of(r: &DMatrix<f64>) -> f64 {
    let rows = (0..r.nrows())
        .map(|i| r.row(i).iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max);
    let cols = (0..r.ncols())
        .map(|j| r.column(j).iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max);
    rows.max(cols)
}

/// Numerical certificate for `r_{jk} ∈ L^d` on a truncated box.
#[derive(Debug, Clone, Serialize)]
pub struct C1Report {
    pub d: usize,
    pub radius: f64,
    pub grid_resolution: usize,
    /// `∫_{[-R,R]^n} |r_jk|^d`, indexed `[j][k]`.
    pub pair_integrals: Vec<Vec<f64>>,
    /// `∫_{[-R,R]^n} ψ^d`.
    pub psi_d_integral: f64,
    /// `max ‖r(x)‖_max` over grid points on the boundary of the box.
    pub boundary_max: f64,
    /// `ψ^d` on the boundary times the box measure.
    pub psi_tail_estimate: f64,
    pub boundary_threshold: f64,
    pub pass: bool,
    pub note: String,
}

/// Trapezoid integration of `|r_jk|^d` and `ψ^d` on `[-R,R]^n` with
/// `grid_resolution` points per axis, plus a decay check on the boundary.
pub fn check_c1(
    model: &CovarianceModel,
    d: usize,
    radius: f64,
    grid_resolution: usize,
) -> Result<C1Report> {
    if model.n > MAX_SPATIAL_DIM {
        return Err(Error::UnsupportedDimension {
            what: "n",
            value: model.n,
            max: MAX_SPATIAL_DIM,
        });
    }
    if !model.whitened {
        return Err(Error::NotWhitened);
    }
    if d == 0 || radius <= 0.0 || grid_resolution < 3 {
        return Err(Error::InvalidArgument(format!(
            "check_c1 needs d >= 1, R > 0, resolution >= 3 (got {d}, {radius}, {grid_resolution})"
        )));
    }
    let (n, m) = (model.n, model.m);
    let intervals = grid_resolution - 1;
    let h = 2.0 * radius / intervals as f64;
    let total = grid_resolution.pow(n as u32);
    let di = d as i32;

    // Per point: m² pair values, ψ^d, then boundary max (or -1 for interior).
    let rows: Vec<Vec<f64>> = (0..total)
        .into_par_iter()
        .map(|flat| -> Result<Vec<f64>> {
            let mut idx = vec![0usize; n];
            unravel(flat, grid_resolution, n, &mut idx);
            let mut w = h.powi(n as i32);
            let mut on_boundary = false;
            let x: Vec<f64> = idx
                .iter()
                .map(|&i| {
                    if i == 0 || i == intervals {
                        w *= 0.5;
                        on_boundary = true;
                    }
                    -radius + i as f64 * h
                })
                .collect();
            let r = model.eval_r(&x)?;
            let mut row: Vec<f64> = r.iter().map(|v| w * v.abs().powi(di)).collect();
            row.push(w * psi_of(&r).powi(di));
            row.push(if on_boundary { r.abs().max() } else { -1.0 });
            row.push(if on_boundary { psi_of(&r) } else { -1.0 });
            Ok(row)
        })
        .collect::<Result<Vec<_>>>()?;

    let column = |c: usize| -> f64 {
        let v: Vec<f64> = rows.iter().map(|r| r[c]).collect();
        pairwise_sum(&v)
    };
    // nalgebra storage is column-major: entry (j,k) sits at k*m + j.
    let pair_integrals: Vec<Vec<f64>> = (0..m)
        .map(|j| (0..m).map(|k| column(k * m + j)).collect())
        .collect();
    let psi_d_integral = column(m * m);
    let boundary_max = rows.iter().map(|r| r[m * m + 1]).fold(0.0, f64::max);
    let boundary_psi = rows.iter().map(|r| r[m * m + 2]).fold(0.0, f64::max);
    let psi_tail_estimate = boundary_psi.powi(di) * (2.0 * radius).powi(n as i32);

    let finite = pair_integrals.iter().flatten().all(|v| v.is_finite()) && psi_d_integral.is_finite();
    let pass = finite && boundary_max < C1_BOUNDARY_THRESHOLD;
    let note = format!(
        "L^{d} membership certified numerically on [-{radius},{radius}]^{n}: \
         integrals finite = {finite}, boundary ‖r‖_max = {boundary_max:e} \
         (threshold {C1_BOUNDARY_THRESHOLD:e}); this is evidence, not a proof"
    );
    Ok(C1Report {
        d,
        radius,
        grid_resolution,
        pair_integrals,
        psi_d_integral,
        boundary_max,
        psi_tail_estimate,
        boundary_threshold: C1_BOUNDARY_THRESHOLD,
        pass,
        note,
    })
}

/// Grid resolution used when the caller does not choose one.
pub fn default_c1_resolution(n: usize) -> usize {
    match n {
        1 => 4001,
        2 => 301,
        _ => 81,
    }
}
