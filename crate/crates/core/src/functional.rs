//! Functionals `G : ℝ^m → ℝ` and the built-in registry.

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::hermite::hermite_unchecked;

type Evaluator = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// A deterministic functional of an `m`-dimensional standard Gaussian vector.
///
/// `integrability` is the exponent `p` of the `L^p(γ_m)` class the caller
/// claims for `G` (`f64::INFINITY` for bounded or polynomial functionals). It
/// is recorded, not verified.
#[derive(Clone)]
pub struct Functional {
    evaluator: Evaluator,
    m: usize,
    integrability: f64,
    discontinuous: bool,
    /// Per axis, a coordinate value where `G` may fail to be smooth.
    breakpoints: Vec<Option<f64>>,
    label: String,
}

impl fmt::Debug for Functional {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Functional")
            .field("label", &self.label)
            .field("m", &self.m)
            .field("integrability", &self.integrability)
            .field("discontinuous", &self.discontinuous)
            .field("breakpoints", &self.breakpoints)
            .finish()
    }
}

impl Functional {
    pub fn new<F>(m: usize, label: impl Into<String>, evaluator: F) -> Self
    where
        F: Fn(&[f64]) -> f64 + Send + Sync + 'static,
    {
        Functional {
            evaluator: Arc::new(evaluator),
            m,
            integrability: f64::INFINITY,
            discontinuous: false,
            breakpoints: vec![None; m],
            label: label.into(),
        }
    }

    pub fn with_integrability(mut self, p: f64) -> Self {
        self.integrability = p;
        self
    }

    /// Marks `G` as having jumps; quadrature orders are doubled for it.
    pub fn with_discontinuities(mut self) -> Self {
        self.discontinuous = true;
        self
    }

    /// Declares that every non-smooth point of `G` lies on the hyperplane
    /// `x_axis = c`. Quadrature then splits that axis at `c`.
    pub fn with_breakpoint(mut self, axis: usize, c: f64) -> Self {
        if axis < self.m {
            self.breakpoints[axis] = Some(c);
        }
        self
    }

    pub fn breakpoint(&self, axis: usize) -> Option<f64> {
        self.breakpoints.get(axis).copied().flatten()
    }

    pub fn has_breakpoints(&self) -> bool {
        self.breakpoints.iter().any(Option::is_some)
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn integrability(&self) -> f64 {
        self.integrability
    }

    pub fn is_discontinuous(&self) -> bool {
        self.discontinuous
    }

    #[inline]
    pub fn eval(&self, x: &[f64]) -> f64 {
        (self.evaluator)(x)
    }

    /// `y ↦ G(S y)`. Breakpoints survive only a positive diagonal `S`.
    pub fn compose_linear(&self, s: &DMatrix<f64>) -> Functional {
        let inner = self.evaluator.clone();
        let m = self.m;
        let diagonal = (0..m).all(|i| {
            s[(i, i)] > 0.0 && (0..m).all(|j| i == j || s[(i, j)] == 0.0)
        });
        let breakpoints = if diagonal {
            (0..m).map(|i| self.breakpoints[i].map(|c| c / s[(i, i)])).collect()
        } else {
            vec![None; m]
        };
        let s = s.clone();
        Functional {
            evaluator: Arc::new(move |y: &[f64]| {
                let mut x = vec![0.0; m];
                for (i, xi) in x.iter_mut().enumerate() {
                    *xi = (0..m).map(|j| s[(i, j)] * y[j]).sum();
                }
                inner(&x)
            }),
            m,
            integrability: self.integrability,
            discontinuous: self.discontinuous,
            breakpoints,
            label: format!("{}∘S", self.label),
        }
    }

    /// `x ↦ G(x) - c`.
    pub fn shifted(&self, c: f64) -> Functional {
        let inner = self.evaluator.clone();
        Functional {
            evaluator: Arc::new(move |x: &[f64]| inner(x) - c),
            m: self.m,
            integrability: self.integrability,
            discontinuous: self.discontinuous,
            breakpoints: self.breakpoints.clone(),
            label: self.label.clone(),
        }
    }
}

/// Registry entries. Axes are zero-based.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case", deny_unknown_fields)]
pub enum FunctionalSpec {
    /// `x_axis`
    Linear { axis: usize },
    /// `H_degree(x_axis)`
    Hermite { axis: usize, degree: usize },
    /// `x_i x_j` with `i != j`
    Product { i: usize, j: usize },
    /// `|x_axis| - √(2/π)`
    AbsCentered { axis: usize },
    /// `sign(x_axis)`
    Sign { axis: usize },
    /// `1{x_axis > threshold} - P(X > threshold)`
    Indicator { axis: usize, threshold: f64 },
}

impl FunctionalSpec {
    pub fn build(&self, m: usize) -> Result<Functional> {
        let check = |axis: usize| {
            if axis >= m {
                Err(Error::InvalidArgument(format!(
                    "functional axis {axis} out of range for m = {m}"
                )))
            } else {
                Ok(axis)
            }
        };
        let g = match *self {
            FunctionalSpec::Linear { axis } => {
                let k = check(axis)?;
                Functional::new(m, format!("x{}", k + 1), move |x| x[k])
            }
            FunctionalSpec::Hermite { axis, degree } => {
                let k = check(axis)?;
                if degree > crate::hermite::MAX_HERMITE_DEGREE {
                    return Err(Error::UnsupportedDegree {
                        degree,
                        max: crate::hermite::MAX_HERMITE_DEGREE,
                    });
                }
                Functional::new(m, format!("H{degree}(x{})", k + 1), move |x| {
                    hermite_unchecked(degree, x[k])
                })
            }
            FunctionalSpec::Product { i, j } => {
                let (i, j) = (check(i)?, check(j)?);
                if i == j {
                    return Err(Error::InvalidArgument(
                        "product functional needs two distinct axes; use hermite degree 2".into(),
                    ));
                }
                Functional::new(m, format!("x{}x{}", i + 1, j + 1), move |x| x[i] * x[j])
            }
            FunctionalSpec::AbsCentered { axis } => {
                let k = check(axis)?;
                let mean = (2.0 / std::f64::consts::PI).sqrt();
                Functional::new(m, format!("|x{}|-sqrt(2/pi)", k + 1), move |x| {
                    x[k].abs() - mean
                })
                .with_breakpoint(k, 0.0)
            }
            FunctionalSpec::Sign { axis } => {
                let k = check(axis)?;
                Functional::new(m, format!("sign(x{})", k + 1), move |x| {
                    if x[k] > 0.0 {
                        1.0
                    } else if x[k] < 0.0 {
                        -1.0
                    } else {
                        0.0
                    }
                })
                .with_discontinuities()
                .with_breakpoint(k, 0.0)
            }
            FunctionalSpec::Indicator { axis, threshold } => {
                let k = check(axis)?;
                let tail = 0.5 * erfc(threshold / std::f64::consts::SQRT_2);
                Functional::new(m, format!("1{{x{} > {threshold}}}", k + 1), move |x| {
                    if x[k] > threshold {
                        1.0 - tail
                    } else {
                        -tail
                    }
                })
                .with_discontinuities()
                .with_breakpoint(k, threshold)
            }
        };
        Ok(g)
    }
}
