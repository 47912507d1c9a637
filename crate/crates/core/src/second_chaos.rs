//! Second-chaos variance by the trace formula and by the spectral formula.
//!
//! `c_jk = ∫ G x_j x_k dγ_m` for `j ≠ k` and `c_jj = ∫ G (x_j² - 1) dγ_m`, so
//! `c_jk = c(G, e_j + e_k)` off the diagonal and `c_jj = 2 c(G, 2e_j)`.
//!
//! Trace route: `V^{(2)} = ½ ∫ Tr[r(x) C r(x) C] dx`.
//!
//! Spectral route, for a single-noise model with real even `α` under the
//! density convention `r(x) = ∫ e^{i⟨t,x⟩} α(t) α(t)ᵀ dt`:
//! `V^{(2)} = (2π)^n / 2 · ‖H‖²_{L²}` with `H(t) = α(-t)ᵀ C α(t)`.
//! With a transform that carries `(2π)^{-n}` and `|α|² = (2π)^n f` the same
//! quantity reads `(2π)^{-n}/2 · ‖H‖²`; the two agree after rescaling `α`.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::Serialize;

use crate::chaos::{axis_rules, effective_order, MAX_TENSOR_DIM, NODE_BUDGET};
use crate::covariance::CovarianceModel;
use crate::error::{Error, Result};
use crate::functional::Functional;
use crate::numeric::{integrate_box, pairwise_sum, unravel};
use crate::spectral::SpectralModel;
use crate::variance::QuadratureSpec;

pub const CONVENTION: &str = "density/plain-exponent";

/// Fraction of the integrand's magnitude below which the quadrature stops
/// resolving the integral relatively.
const MAGNITUDE_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct SecondChaosMatrix(pub DMatrix<f64>);

impl SecondChaosMatrix {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        (0..self.dim())
            .map(|i| self.0.row(i).iter().copied().collect())
            .collect()
    }
}

/// Gauss–Hermite quadrature of the defining integrals of `C`.
pub fn c_matrix(g: &Functional, quadrature_order: usize) -> Result<SecondChaosMatrix> {
    let m = g.m();
    if m == 0 || m > MAX_TENSOR_DIM {
        return Err(Error::UnsupportedDimension {
            what: "m",
            value: m,
            max: MAX_TENSOR_DIM,
        });
    }
    let order = effective_order(g, quadrature_order.max(2));
    if order.pow(m as u32) > NODE_BUDGET {
        return Err(Error::QuadratureBudget(format!("{order}^{m} nodes")));
    }
    let rules = axis_rules(g, order);
    let last = &rules[m - 1];
    let prefixes = order.pow((m - 1) as u32);
    let partial: Vec<Vec<f64>> = (0..prefixes)
        .into_par_iter()
        .map(|p| -> Result<Vec<f64>> {
            let mut idx = vec![0usize; m - 1];
            unravel(p, order, m - 1, &mut idx);
            let mut x = vec![0.0; m];
            let mut w0 = 1.0;
            for (d, &i) in idx.iter().enumerate() {
                x[d] = rules[d].nodes[i];
                w0 *= rules[d].weights[i];
            }
            let mut acc = vec![0.0; m * m];
            for i in 0..order {
                x[m - 1] = last.nodes[i];
                let v = g.eval(&x);
                if !v.is_finite() {
                    return Err(Error::Evaluation {
                        label: g.label().to_string(),
                        node: x.clone(),
                    });
                }
                let wv = w0 * last.weights[i] * v;
                for j in 0..m {
                    for k in 0..m {
                        let moment = if j == k { x[j] * x[j] - 1.0 } else { x[j] * x[k] };
                        acc[j * m + k] += wv * moment;
                    }
                }
            }
            Ok(acc)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut c = DMatrix::zeros(m, m);
    for j in 0..m {
        for k in 0..m {
            let col: Vec<f64> = partial.iter().map(|p| p[j * m + k]).collect();
            c[(j, k)] = pairwise_sum(&col);
        }
    }
    let sym = 0.5 * (&c + c.transpose());
    Ok(SecondChaosMatrix(sym))
}

/// `½ Tr[r C r C]`.
pub fn trace_integrand(r: &DMatrix<f64>, c: &DMatrix<f64>) -> f64 {
    let rc = r * c;
    0.5 * (&rc * &rc).trace()
}

/// `½ ∫_{[-R,R]^n} Tr[r(x) C r(x) C] dx`.
pub fn v2_trace(model: &CovarianceModel, c: &SecondChaosMatrix, radius: f64) -> Result<f64> {
    if !model.is_whitened() {
        return Err(Error::NotWhitened);
    }
    if c.dim() != model.m {
        return Err(Error::DimensionMismatch {
            expected: model.m,
            got: c.dim(),
        });
    }
    if c.0.iter().all(|&v| v == 0.0) {
        return Ok(0.0);
    }
    let spec = QuadratureSpec::for_dim(model.n);
    let failure = std::sync::Mutex::new(None);
    let c_norm2 = c.0.norm_squared();
    // The second component, a scaled Cauchy–Schwarz bound, keeps the
    // stopping rule meaningful when the integral cancels to zero.
    let res = integrate_box(model.n, radius, 2, spec.rel_tol, spec.max_points, |x| {
        match model.eval_r(x) {
            Ok(r) => vec![
                trace_integrand(&r, &c.0),
                MAGNITUDE_FLOOR * 0.5 * r.norm_squared() * c_norm2,
            ],
            Err(e) => {
                failure.lock().unwrap().get_or_insert(e);
                vec![0.0, 0.0]
            }
        }
    })?;
    if let Some(e) = failure.into_inner().unwrap() {
        return Err(e);
    }
    Ok(res.values[0])
}

/// `H(t) = α(-t)ᵀ C α(t)`.
pub fn spectral_h(spec: &SpectralModel, c: &SecondChaosMatrix, t: &[f64]) -> Result<f64> {
    let a = spec.alpha(t)?;
    let neg: Vec<f64> = t.iter().map(|v| -v).collect();
    let b = spec.alpha(&neg)?;
    let m = c.dim();
    let mut h = 0.0;
    for j in 0..m {
        for k in 0..m {
            h += b[j] * c.0[(j, k)] * a[k];
        }
    }
    Ok(h)
}

/// `(2π)^n / 2 · ∫ H(t)² dt` over `[-T_max, T_max]^n`.
pub fn v2_spectral(spec: &SpectralModel, c: &SecondChaosMatrix) -> Result<f64> {
    if !spec.is_single_noise() {
        return Err(Error::Spectral(
            "the spectral formula needs a single-noise model".into(),
        ));
    }
    if c.dim() != spec.m {
        return Err(Error::DimensionMismatch {
            expected: spec.m,
            got: c.dim(),
        });
    }
    spec.check_normalized()?;
    if c.0.iter().all(|&v| v == 0.0) {
        return Ok(0.0);
    }
    let q = QuadratureSpec::for_dim(spec.n);
    let c_norm = c.0.norm();
    let res = integrate_box(spec.n, spec.t_max, 2, 1e-9, q.max_points, |t| {
        let h = spectral_h(spec, c, t).expect("single-noise model");
        let a2: f64 = spec.alpha(t).expect("single-noise model").iter().map(|v| v * v).sum();
        vec![h * h, MAGNITUDE_FLOOR * (a2 * c_norm).powi(2)]
    })?;
    let scale = (2.0 * std::f64::consts::PI).powi(spec.n as i32) / 2.0;
    Ok(scale * res.values[0])
}

#[derive(Debug, Clone, Serialize)]
pub struct SecondChaosReport {
    #[serde(rename = "V2_trace")]
    pub v2_trace: f64,
    #[serde(rename = "V2_spectral")]
    pub v2_spectral: Option<f64>,
    #[serde(rename = "V2_chaos")]
    pub v2_chaos: Option<f64>,
    #[serde(rename = "C_matrix")]
    pub c_matrix: Vec<Vec<f64>>,
    pub convention: &'static str,
}
