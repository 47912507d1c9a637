//! Covariance of `G(ξ(x))` across lags and the variances `V_s`, `V^{(q)}`, `V`.
//!
//! Orientation: with `r_ij(x - y) = E[ξ_i(x) ξ_j(y)]`, the lag-`x` cross
//! covariance fed to the diagram formula is `ρ(x)_ij = E[ξ_i(x) ξ_j(0)] = r_ij(x)`,
//! so `C_G(x) = E[G(ξ(x)) G(ξ(0))]`.

use std::io::Write;

use serde::Serialize;

use crate::chaos::{hermite_rank, ChaosExpansion, RANK_TOLERANCE};
use crate::covariance::{check_c1, default_c1_resolution, psi_of, C1Report, CovarianceModel};
use crate::diagram::DiagramPolynomial;
use crate::error::{Error, Result};
use crate::numeric::integrate_box;

/// Integration controls for `V_s` and `V`.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct QuadratureSpec {
    /// Step halving stops when successive estimates differ by less than this,
    /// relative to the estimate.
    pub rel_tol: f64,
    pub max_points: usize,
}

impl QuadratureSpec {
    pub fn for_dim(n: usize) -> Self {
        QuadratureSpec {
            rel_tol: 1e-6,
            max_points: match n {
                1 => 1 << 20,
                2 => 1 << 22,
                _ => 1 << 24,
            },
        }
    }
}

/// `x ↦ (C_{G_q}(x))_q` for a fixed expansion and whitened model.
pub struct CovarianceKernel<'a> {
    model: &'a CovarianceModel,
    poly: DiagramPolynomial,
    levels: Vec<usize>,
}

impl<'a> CovarianceKernel<'a> {
    pub fn new(e: &ChaosExpansion, model: &'a CovarianceModel) -> Result<Self> {
        if !model.is_whitened() {
            return Err(Error::NotWhitened);
        }
        if e.m != model.m {
            return Err(Error::DimensionMismatch {
                expected: model.m,
                got: e.m,
            });
        }
        let poly = DiagramPolynomial::from_expansion(e)?;
        let levels = poly.levels().collect();
        Ok(CovarianceKernel {
            model,
            poly,
            levels,
        })
    }

    /// Chaos levels `q >= 1` present in the expansion.
    pub fn levels(&self) -> &[usize] {
        &self.levels
    }

    pub fn eval_levels(&self, x: &[f64]) -> Result<Vec<f64>> {
        let r = self.model.eval_r(x)?;
        Ok(self.poly.eval_levels(&r))
    }

    pub fn eval(&self, x: &[f64]) -> Result<f64> {
        Ok(self.eval_levels(x)?.iter().sum())
    }

    /// Integrates the per-level kernel times `weight(x)` over `[-half,half]^n`.
    fn integrate<W>(&self, half: f64, spec: QuadratureSpec, weight: W) -> Result<(Vec<f64>, f64)>
    where
        W: Fn(&[f64]) -> f64 + Sync,
    {
        let k = self.levels.len();
        if k == 0 {
            return Ok((Vec::new(), 0.0));
        }
        let failure = std::sync::Mutex::new(None);
        let result = integrate_box(self.model.n, half, k, spec.rel_tol, spec.max_points, |x| {
            match self.eval_levels(x) {
                Ok(v) => {
                    let w = weight(x);
                    v.into_iter().map(|c| c * w).collect()
                }
                Err(e) => {
                    failure.lock().unwrap().get_or_insert(e);
                    vec![0.0; k]
                }
            }
        })?;
        if let Some(e) = failure.into_inner().unwrap() {
            return Err(e);
        }
        Ok((result.values, result.last_change))
    }
}

/// `C_G(x)` summed over the retained levels `q >= 1`.
pub fn c_g(e: &ChaosExpansion, model: &CovarianceModel, x: &[f64]) -> Result<f64> {
    CovarianceKernel::new(e, model)?.eval(x)
}

/// Per-level `C_{G_q}(x)` as `(q, value)` pairs.
pub fn c_g_levels(e: &ChaosExpansion, model: &CovarianceModel, x: &[f64]) -> Result<Vec<(usize, f64)>> {
    let k = CovarianceKernel::new(e, model)?;
    let vals = k.eval_levels(x)?;
    Ok(k.levels().iter().copied().zip(vals).collect())
}

/// `I_{2s}(x) = Π_i (1 - |x_i|/(2s))` on `[-2s, 2s]^n`, zero outside.
pub fn triangular_kernel(x: &[f64], s: f64) -> f64 {
    x.iter()
        .map(|&xi| (1.0 - xi.abs() / (2.0 * s)).max(0.0))
        .product()
}

/// Per-level `V_s^{(q)} = ∫ C_{G_q}(x) I_{2s}(x) dx`, integrated over
/// `[-min(2s, R), min(2s, R)]^n` with `R` the model's decay radius.
pub fn v_s_levels(
    e: &ChaosExpansion,
    model: &CovarianceModel,
    s: f64,
    spec: QuadratureSpec,
) -> Result<Vec<(usize, f64)>> {
    if !(s > 0.0) {
        return Err(Error::InvalidArgument(format!("s must be positive, got {s}")));
    }
    let kernel = CovarianceKernel::new(e, model)?;
    let half = (2.0 * s).min(model.decay_radius);
    let (vals, _) = kernel.integrate(half, spec, |x| triangular_kernel(x, s))?;
    Ok(kernel.levels().iter().copied().zip(vals).collect())
}

/// `V_s = ∫ C_G(x) I_{2s}(x) dx`.
pub fn v_s(e: &ChaosExpansion, model: &CovarianceModel, s: f64, spec: QuadratureSpec) -> Result<f64> {
    Ok(v_s_levels(e, model, s, spec)?.iter().map(|(_, v)| v).sum())
}

#[derive(Debug, Clone, Serialize)]
pub struct LevelVariance {
    pub q: usize,
    pub value: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct FiniteWindow {
    pub s: f64,
    pub v_s: f64,
    pub per_level: Vec<LevelVariance>,
}

#[derive(Debug, Clone, Serialize)]
pub struct VarianceReport {
    pub rank: usize,
    pub radius: f64,
    /// `V^{(q)} = ∫_{[-R,R]^n} C_{G_q}`.
    pub per_level: Vec<LevelVariance>,
    /// `V = Σ_q V^{(q)}`.
    pub v: f64,
    /// Upper bound on the contribution of levels above `q_max`:
    /// `(‖G‖² - captured mass) · ∫ ψ^d`.
    pub chaos_tail_bound: f64,
    /// Last step-halving change of the box integral.
    pub quadrature_change: f64,
    /// `‖G‖² · sup_{∂[-R,R]^n} ψ^d`, a bound on `|C_G|` outside the box.
    pub boundary_integrand_bound: f64,
    pub quadrature: QuadratureSpec,
    pub finite_windows: Vec<FiniteWindow>,
    pub c1: C1Report,
    pub note: String,
}

impl VarianceReport {
    /// Appends `V_s` for each `s` in `s_values`.
    pub fn add_finite_windows(
        &mut self,
        e: &ChaosExpansion,
        model: &CovarianceModel,
        s_values: &[f64],
    ) -> Result<()> {
        for &s in s_values {
            let levels = v_s_levels(e, model, s, self.quadrature)?;
            self.finite_windows.push(FiniteWindow {
                s,
                v_s: levels.iter().map(|(_, v)| v).sum(),
                per_level: levels
                    .into_iter()
                    .map(|(q, value)| LevelVariance { q, value })
                    .collect(),
            });
        }
        Ok(())
    }

    /// `(s, V_s)` table for plotting convergence.
    pub fn write_convergence_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "s,V_s")?;
        for w in &self.finite_windows {
            writeln!(out, "{},{:.17e}", w.s, w.v_s)?;
        }
        Ok(())
    }

    pub fn level(&self, q: usize) -> Option<f64> {
        self.per_level.iter().find(|l| l.q == q).map(|l| l.value)
    }
}

/// `V = lim_{s→∞} V_s = ∫ C_G`, per level, after certifying `r ∈ L^d` on
/// `[-R,R]^n` for the Hermite rank `d` of the expansion.
pub fn v_limit(e: &ChaosExpansion, model: &CovarianceModel, radius: f64) -> Result<VarianceReport> {
    v_limit_with(e, model, radius, QuadratureSpec::for_dim(model.n))
}

pub fn v_limit_with(
    e: &ChaosExpansion,
    model: &CovarianceModel,
    radius: f64,
    spec: QuadratureSpec,
) -> Result<VarianceReport> {
    let rank = hermite_rank(e, RANK_TOLERANCE)?;
    let c1 = check_c1(model, rank, radius, default_c1_resolution(model.n))?;
    if !c1.pass {
        return Err(Error::C1Failed(c1.note));
    }
    let kernel = CovarianceKernel::new(e, model)?;
    let (vals, change) = kernel.integrate(radius, spec, |_| 1.0)?;
    let per_level: Vec<LevelVariance> = kernel
        .levels()
        .iter()
        .copied()
        .zip(vals)
        .map(|(q, value)| LevelVariance { q, value })
        .collect();
    let v = per_level.iter().map(|l| l.value).sum();

    let g_norm = e.total_mass.max(e.captured_mass) - e.mean().powi(2);
    let chaos_tail_bound = e.residual_mass() * c1.psi_d_integral;
    let boundary_psi = boundary_psi_max(model, radius)?;
    Ok(VarianceReport {
        rank,
        radius,
        per_level,
        v,
        chaos_tail_bound,
        quadrature_change: change,
        boundary_integrand_bound: g_norm.max(0.0) * boundary_psi.powi(rank as i32),
        quadrature: spec,
        finite_windows: Vec::new(),
        note: "V integrated over a truncated box; no convergence rate of V_s to V is claimed".into(),
        c1,
    })
}

fn boundary_psi_max(model: &CovarianceModel, radius: f64) -> Result<f64> {
    let n = model.n;
    let per_axis = 33usize;
    let h = 2.0 * radius / (per_axis - 1) as f64;
    let mut idx = vec![0usize; n];
    let mut best: f64 = 0.0;
    for flat in 0..per_axis.pow(n as u32) {
        crate::numeric::unravel(flat, per_axis, n, &mut idx);
        if !idx.iter().any(|&i| i == 0 || i == per_axis - 1) {
            continue;
        }
        let x: Vec<f64> = idx.iter().map(|&i| -radius + i as f64 * h).collect();
        best = best.max(psi_of(&model.eval_r(&x)?));
    }
    Ok(best)
}
