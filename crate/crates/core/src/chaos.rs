//! Wiener chaos expansion of a functional:
//! `G = Σ_q Σ_{|a|=q} c(G,a) H̄_a` with `c(G,a) = (1/a!) ∫ G H̄_a dγ_m`.
//!
//! Coefficients are computed with tensorized Gauss–Hermite quadrature. The
//! tensor is contracted one axis at a time, so the cost is
//! `O(Q^m (q_max + 1))` rather than `O(Q^m · #multi-indices)`.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::functional::Functional;
use crate::hermite::{hermite_table, multi_hermite_eval, MultiIndex};
use crate::numeric::{pairwise_sum, unravel, GaussHermite};

/// `|c|·√(a!)` below this is treated as quadrature noise and dropped.
pub const DROP_THRESHOLD: f64 = 1e-12;
/// Default tolerance for [`hermite_rank`].
pub const RANK_TOLERANCE: f64 = 1e-9;
pub const DEFAULT_QUADRATURE_ORDER: usize = 64;
pub const MAX_TENSOR_DIM: usize = 4;
pub const MAX_CHAOS_LEVEL: usize = 12;
/// Largest tensor grid evaluated (64⁴).
pub const NODE_BUDGET: usize = 1 << 24;

#[derive(Debug, Clone, PartialEq)]
pub struct ChaosTerm {
    pub index: MultiIndex,
    pub coefficient: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChaosExpansion {
    pub m: usize,
    pub q_max: usize,
    pub quadrature_order: usize,
    pub levels: BTreeMap<usize, Vec<ChaosTerm>>,
    /// `Σ c(G,a)² a!` over the retained terms (level 0 included when present).
    pub captured_mass: f64,
    /// Quadrature estimate of `‖G‖²_{L²(γ_m)}`.
    pub total_mass: f64,
}

impl ChaosExpansion {
    /// Builds an expansion from explicit terms. Masses are taken as exact,
    /// which is what a truncated polynomial functional has.
    pub fn from_terms(m: usize, terms: impl IntoIterator<Item = (MultiIndex, f64)>) -> Result<Self> {
        let mut levels: BTreeMap<usize, Vec<ChaosTerm>> = BTreeMap::new();
        for (index, coefficient) in terms {
            if index.dim() != m {
                return Err(Error::DimensionMismatch {
                    expected: m,
                    got: index.dim(),
                });
            }
            let level = levels.entry(index.order()).or_default();
            if level.iter().any(|t| t.index == index) {
                return Err(Error::InvalidArgument(format!(
                    "duplicate multi-index {:?}",
                    index.exponents()
                )));
            }
            level.push(ChaosTerm { index, coefficient });
        }
        let captured = mass_of(&levels);
        let q_max = levels.keys().next_back().copied().unwrap_or(0);
        Ok(ChaosExpansion {
            m,
            q_max,
            quadrature_order: 0,
            levels,
            captured_mass: captured,
            total_mass: captured,
        })
    }

    pub fn level(&self, q: usize) -> Option<&[ChaosTerm]> {
        self.levels.get(&q).map(|v| v.as_slice())
    }

    pub fn coefficient(&self, a: &MultiIndex) -> f64 {
        self.level(a.order())
            .and_then(|terms| terms.iter().find(|t| &t.index == a))
            .map(|t| t.coefficient)
            .unwrap_or(0.0)
    }

    /// Coefficient of the constant term, `G₀ = E[G]`.
    pub fn mean(&self) -> f64 {
        self.level(0)
            .and_then(|t| t.first())
            .map(|t| t.coefficient)
            .unwrap_or(0.0)
    }

    /// `captured_mass - G₀²`, i.e. `Var G` restricted to the retained levels.
    pub fn centered_mass(&self) -> f64 {
        let g0 = self.mean();
        self.captured_mass - g0 * g0
    }

    /// `‖G‖² - captured_mass`, clamped at zero.
    pub fn residual_mass(&self) -> f64 {
        (self.total_mass - self.captured_mass).max(0.0)
    }

    /// Per-level mass `Σ_{|a|=q} c² a!`.
    pub fn level_mass(&self, q: usize) -> f64 {
        self.level(q)
            .map(|terms| {
                terms
                    .iter()
                    .map(|t| t.coefficient * t.coefficient * t.index.factorial_f64())
                    .sum()
            })
            .unwrap_or(0.0)
    }

    /// Keeps only level `q`.
    pub fn project(&self, q: usize) -> ChaosExpansion {
        let mut levels = BTreeMap::new();
        if let Some(t) = self.levels.get(&q) {
            levels.insert(q, t.clone());
        }
        let captured = mass_of(&levels);
        ChaosExpansion {
            m: self.m,
            q_max: self.q_max,
            quadrature_order: self.quadrature_order,
            levels,
            captured_mass: captured,
            total_mass: captured,
        }
    }

    /// Serializes with every float printed to 17 significant digits.
    pub fn to_json(&self) -> Result<String> {
        let doc = ExpansionDoc {
            m: self.m,
            q_max: self.q_max,
            levels: self
                .levels
                .iter()
                .map(|(&q, terms)| LevelDoc {
                    q,
                    terms: terms
                        .iter()
                        .map(|t| TermDoc {
                            a: t.index.exponents().to_vec(),
                            c: Sig17(t.coefficient),
                        })
                        .collect(),
                })
                .collect(),
            captured_mass: Sig17(self.captured_mass),
            total_mass: Sig17(self.total_mass),
        };
        Ok(serde_json::to_string_pretty(&doc)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: ExpansionDocIn = serde_json::from_str(text)?;
        let mut levels = BTreeMap::new();
        for level in doc.levels {
            let terms = level
                .terms
                .into_iter()
                .map(|t| {
                    let index = MultiIndex::new(t.a);
                    if index.order() != level.q || index.dim() != doc.m {
                        return Err(Error::InvalidArgument(format!(
                            "term {:?} does not belong to level {} with m = {}",
                            index.exponents(),
                            level.q,
                            doc.m
                        )));
                    }
                    Ok(ChaosTerm {
                        index,
                        coefficient: t.c,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            levels.insert(level.q, terms);
        }
        Ok(ChaosExpansion {
            m: doc.m,
            q_max: doc.q_max,
            quadrature_order: 0,
            levels,
            captured_mass: doc.captured_mass,
            total_mass: doc.total_mass,
        })
    }
}

fn mass_of(levels: &BTreeMap<usize, Vec<ChaosTerm>>) -> f64 {
    levels
        .values()
        .flatten()
        .map(|t| t.coefficient * t.coefficient * t.index.factorial_f64())
        .sum()
}

/// JSON float printed as `{:.16e}` (17 significant digits).
#[derive(Debug, Clone, Copy)]
pub struct Sig17(pub f64);

impl Serialize for Sig17 {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        if !self.0.is_finite() {
            return s.serialize_none();
        }
        let raw = serde_json::value::RawValue::from_string(format!("{:.16e}", self.0))
            .map_err(serde::ser::Error::custom)?;
        raw.serialize(s)
    }
}

#[derive(Serialize)]
struct TermDoc {
    a: Vec<usize>,
    c: Sig17,
}

#[derive(Serialize)]
struct LevelDoc {
    q: usize,
    terms: Vec<TermDoc>,
}

#[derive(Serialize)]
struct ExpansionDoc {
    m: usize,
    q_max: usize,
    levels: Vec<LevelDoc>,
    captured_mass: Sig17,
    total_mass: Sig17,
}

#[derive(Deserialize)]
struct TermDocIn {
    a: Vec<usize>,
    c: f64,
}

#[derive(Deserialize)]
struct LevelDocIn {
    q: usize,
    terms: Vec<TermDocIn>,
}

#[derive(Deserialize)]
struct ExpansionDocIn {
    m: usize,
    q_max: usize,
    levels: Vec<LevelDocIn>,
    captured_mass: f64,
    total_mass: f64,
}

/// Quadrature order actually used for `g`: doubled for discontinuous
/// functionals without declared breakpoints, as long as the tensor grid
/// stays within [`NODE_BUDGET`].
pub fn effective_order(g: &Functional, requested: usize) -> usize {
    if !g.is_discontinuous() || g.has_breakpoints() {
        return requested;
    }
    let doubled = 2 * requested;
    if doubled.checked_pow(g.m() as u32).is_some_and(|n| n <= NODE_BUDGET) {
        doubled
    } else {
        requested
    }
}

/// One rule per axis: split at the declared breakpoint, plain Gauss–Hermite
/// elsewhere. All rules have `order` nodes.
pub(crate) fn axis_rules(g: &Functional, order: usize) -> Vec<GaussHermite> {
    let plain = GaussHermite::new(order);
    (0..g.m())
        .map(|d| match g.breakpoint(d) {
            Some(c) => GaussHermite::split(order, c),
            None => plain.clone(),
        })
        .collect()
}

/// All chaos coefficients of `g` with `|a| <= q_max`.
pub fn chaos_coefficients(
    g: &Functional,
    q_max: usize,
    quadrature_order: usize,
) -> Result<ChaosExpansion> {
    let m = g.m();
    if m == 0 || m > MAX_TENSOR_DIM {
        return Err(Error::UnsupportedDimension {
            what: "m",
            value: m,
            max: MAX_TENSOR_DIM,
        });
    }
    if q_max > MAX_CHAOS_LEVEL {
        return Err(Error::InvalidArgument(format!(
            "q_max = {q_max} exceeds {MAX_CHAOS_LEVEL}"
        )));
    }
    if quadrature_order < 2 * q_max || quadrature_order == 0 {
        return Err(Error::InvalidArgument(format!(
            "quadrature order {quadrature_order} must be at least 2·q_max = {}",
            2 * q_max
        )));
    }
    let order = effective_order(g, quadrature_order);
    if order.checked_pow(m as u32).is_none_or(|n| n > NODE_BUDGET) {
        return Err(Error::QuadratureBudget(format!(
            "{order}^{m} nodes exceed the budget of {NODE_BUDGET}"
        )));
    }
    let rules = axis_rules(g, order);
    let k = q_max + 1;

    // weighted[d][i * k + j] = w_i · H_j(x_i) for the rule of axis d
    let mut table = vec![0.0; k];
    let weighted: Vec<Vec<f64>> = rules
        .iter()
        .map(|rule| {
            let mut w_axis = vec![0.0; order * k];
            for (i, (&x, &w)) in rule.nodes.iter().zip(&rule.weights).enumerate() {
                hermite_table(x, &mut table);
                for j in 0..k {
                    w_axis[i * k + j] = w * table[j];
                }
            }
            w_axis
        })
        .collect();

    // First contraction fused with the evaluation of G along the last axis.
    let last = &rules[m - 1];
    let prefixes = order.pow((m - 1) as u32);
    let first: Vec<(Vec<f64>, f64)> = (0..prefixes)
        .into_par_iter()
        .map(|p| -> Result<(Vec<f64>, f64)> {
            let mut idx = vec![0usize; m - 1];
            unravel(p, order, m - 1, &mut idx);
            let mut x = vec![0.0; m];
            let mut prefix_weight = 1.0;
            for (d, &i) in idx.iter().enumerate() {
                x[d] = rules[d].nodes[i];
                prefix_weight *= rules[d].weights[i];
            }
            let mut acc = vec![0.0; k];
            let mut sq = Vec::with_capacity(order);
            for i in 0..order {
                x[m - 1] = last.nodes[i];
                let v = g.eval(&x);
                if !v.is_finite() {
                    return Err(Error::Evaluation {
                        label: g.label().to_string(),
                        node: x.clone(),
                    });
                }
                for j in 0..k {
                    acc[j] += weighted[m - 1][i * k + j] * v;
                }
                sq.push(last.weights[i] * v * v);
            }
            Ok((acc, prefix_weight * pairwise_sum(&sq)))
        })
        .collect::<Result<Vec<_>>>()?;

    let masses: Vec<f64> = first.iter().map(|(_, s)| *s).collect();
    let total_mass = pairwise_sum(&masses);
    let mut tensor: Vec<f64> = first.into_iter().flat_map(|(v, _)| v).collect();

    // Remaining node axes, innermost first.
    for r in (1..m).rev() {
        let inner = k.pow((m - r) as u32);
        let outer = order.pow((r - 1) as u32);
        let old = tensor;
        tensor = (0..outer)
            .into_par_iter()
            .flat_map_iter(|o| {
                let old = &old;
                let weighted = &weighted[r - 1];
                (0..k).flat_map(move |kr| {
                    (0..inner).map(move |kk| {
                        let mut s = 0.0;
                        for i in 0..order {
                            s += weighted[i * k + kr] * old[(o * order + i) * inner + kk];
                        }
                        s
                    })
                })
            })
            .collect();
    }

    let mut levels: BTreeMap<usize, Vec<ChaosTerm>> = BTreeMap::new();
    for q in 0..=q_max {
        for a in MultiIndex::of_order(m, q) {
            let flat = a.exponents().iter().fold(0usize, |acc, &e| acc * k + e);
            let fact = a.factorial_f64();
            let c = tensor[flat] / fact;
            if c.abs() * fact.sqrt() >= DROP_THRESHOLD {
                levels.entry(q).or_default().push(ChaosTerm {
                    index: a,
                    coefficient: c,
                });
            }
        }
    }
    let captured_mass = mass_of(&levels);
    Ok(ChaosExpansion {
        m,
        q_max,
        quadrature_order: order,
        levels,
        captured_mass,
        total_mass,
    })
}

/// Smallest `q >= 1` carrying a coefficient with `|c| > tol`.
pub fn hermite_rank(e: &ChaosExpansion, tol: f64) -> Result<usize> {
    e.levels
        .iter()
        .filter(|(&q, _)| q >= 1)
        .find(|(_, terms)| terms.iter().any(|t| t.coefficient.abs() > tol))
        .map(|(&q, _)| q)
        .ok_or(Error::DegenerateFunctional { tol })
}

/// `G_q(x) = Σ_{|a|=q} c(G,a) H̄_a(x)`.
pub fn evaluate_g_q(e: &ChaosExpansion, q: usize, x: &[f64]) -> Result<f64> {
    let terms = e.level(q).ok_or(Error::AbsentLevel(q))?;
    let mut s = 0.0;
    for t in terms {
        s += t.coefficient * multi_hermite_eval(&t.index, x)?;
    }
    Ok(s)
}
