//! Diagram formula for Hermite products of two jointly Gaussian vectors.
//!
//! For standard Gaussian `X, Y ∈ ℝ^m` with `E[X_i Y_j] = ρ_ij`,
//!
//! ```text
//! E[H̄_a(X) H̄_b(Y)] = 1{|a|=|b|} Σ_K a! b! Π_{ij} ρ_ij^{K_ij} / K_ij!
//! ```
//!
//! where `K` ranges over nonnegative integer `m × m` tables with row sums `a`
//! and column sums `b`.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::chaos::ChaosExpansion;
use crate::error::{Error, Result};
use crate::hermite::MultiIndex;
use crate::numeric::factorial_u128;

/// Maximum number of tables enumerated before giving up.
pub const TABLE_BUDGET: usize = 10_000_000;
pub const MAX_PAIR_ORDER: usize = 12;

/// `ρ_ij = E[X_i Y_j]` for jointly standard Gaussian `X, Y`.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossCovarianceMatrix(DMatrix<f64>);

impl CrossCovarianceMatrix {
    /// Validates `|ρ_ij| <= 1` and that `[[Id, ρ], [ρᵀ, Id]]` is PSD to `-1e-8`.
    pub fn new(rho: DMatrix<f64>) -> Result<Self> {
        if !rho.is_square() {
            return Err(Error::InvalidArgument("ρ must be square".into()));
        }
        let m = rho.nrows();
        if rho.iter().any(|v| !v.is_finite() || v.abs() > 1.0 + 1e-12) {
            return Err(Error::InvalidArgument("correlations must lie in [-1, 1]".into()));
        }
        let mut block = DMatrix::identity(2 * m, 2 * m);
        block.view_mut((0, m), (m, m)).copy_from(&rho);
        block.view_mut((m, 0), (m, m)).copy_from(&rho.transpose());
        let min = SymmetricEigen::new(block)
            .eigenvalues
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min);
        if min < -1e-8 {
            return Err(Error::InvalidArgument(format!(
                "ρ is not a feasible cross-covariance (block eigenvalue {min:e})"
            )));
        }
        Ok(CrossCovarianceMatrix(rho))
    }

    /// Skips feasibility checks; for lags of a model already known to be valid.
    pub fn unchecked(rho: DMatrix<f64>) -> Self {
        CrossCovarianceMatrix(rho)
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn transpose(&self) -> Self {
        CrossCovarianceMatrix(self.0.transpose())
    }
}

/// Visits every nonnegative integer table with the given margins, in
/// row-major lexicographic order. Stops with an error after `budget` tables.
pub fn for_each_table<F>(rows: &[usize], cols: &[usize], budget: usize, mut visit: F) -> Result<usize>
where
    F: FnMut(&[usize]),
{
    let m_r = rows.len();
    let m_c = cols.len();
    if rows.iter().sum::<usize>() != cols.iter().sum::<usize>() {
        return Ok(0);
    }
    let mut table = vec![0usize; m_r * m_c];
    let mut col_left = cols.to_vec();
    let mut count = 0usize;

    #[allow(clippy::too_many_arguments)]
    fn rec<F: FnMut(&[usize])>(
        i: usize,
        j: usize,
        row_left: usize,
        rows: &[usize],
        col_left: &mut [usize],
        table: &mut [usize],
        count: &mut usize,
        budget: usize,
        visit: &mut F,
    ) -> Result<()> {
        let m_r = rows.len();
        let m_c = col_left.len();
        if i == m_r {
            if col_left.iter().all(|&c| c == 0) {
                *count += 1;
                if *count > budget {
                    return Err(Error::BudgetExceeded { budget });
                }
                visit(table);
            }
            return Ok(());
        }
        if j + 1 == m_c {
            // Last column takes what is left of the row.
            if row_left > col_left[j] {
                return Ok(());
            }
            table[i * m_c + j] = row_left;
            col_left[j] -= row_left;
            let next_row = if i + 1 < m_r { rows[i + 1] } else { 0 };
            rec(i + 1, 0, next_row, rows, col_left, table, count, budget, visit)?;
            col_left[j] += row_left;
            table[i * m_c + j] = 0;
            return Ok(());
        }
        let hi = row_left.min(col_left[j]);
        for k in (0..=hi).rev() {
            table[i * m_c + j] = k;
            col_left[j] -= k;
            rec(i, j + 1, row_left - k, rows, col_left, table, count, budget, visit)?;
            col_left[j] += k;
        }
        table[i * m_c + j] = 0;
        Ok(())
    }

    if m_r == 0 {
        visit(&table);
        return Ok(1);
    }
    rec(
        0,
        0,
        rows[0],
        rows,
        &mut col_left,
        &mut table,
        &mut count,
        budget,
        &mut visit,
    )?;
    Ok(count)
}

/// `a! b! / Π K_ij!` as an exact integer.
fn table_weight(a: &MultiIndex, b: &MultiIndex, table: &[usize]) -> u128 {
    let m = a.dim();
    let mut w: u128 = b.factorial();
    for i in 0..m {
        let mut row = factorial_u128(a.exponents()[i]);
        for j in 0..m {
            row /= factorial_u128(table[i * m + j]);
        }
        w *= row;
    }
    w
}

/// `E[H̄_a(X) H̄_b(Y)]` by the diagram formula.
pub fn pair_expectation(a: &MultiIndex, b: &MultiIndex, rho: &CrossCovarianceMatrix) -> Result<f64> {
    let m = rho.dim();
    if a.dim() != m || b.dim() != m {
        return Err(Error::DimensionMismatch {
            expected: m,
            got: if a.dim() != m { a.dim() } else { b.dim() },
        });
    }
    if m > crate::chaos::MAX_TENSOR_DIM {
        return Err(Error::UnsupportedDimension {
            what: "m",
            value: m,
            max: crate::chaos::MAX_TENSOR_DIM,
        });
    }
    if a.order() > MAX_PAIR_ORDER || b.order() > MAX_PAIR_ORDER {
        return Err(Error::InvalidArgument(format!(
            "|a|, |b| must not exceed {MAX_PAIR_ORDER}"
        )));
    }
    if a.order() != b.order() {
        return Ok(0.0);
    }
    // Factors and terms are combined in sorted order so that the value is
    // invariant under (a, b, ρ) -> (b, a, ρᵀ) bit for bit.
    let r = rho.matrix();
    let mut terms = Vec::new();
    let mut factors = Vec::with_capacity(m * m);
    for_each_table(a.exponents(), b.exponents(), TABLE_BUDGET, |k| {
        factors.clear();
        for i in 0..m {
            for j in 0..m {
                let e = k[i * m + j];
                if e > 0 {
                    factors.push(r[(i, j)].powi(e as i32));
                }
            }
        }
        factors.sort_by(f64::total_cmp);
        let weight = table_weight(a, b, k) as f64;
        terms.push(factors.iter().fold(weight, |acc, f| acc * f));
    })?;
    terms.sort_by(f64::total_cmp);
    Ok(terms.iter().sum())
}

/// `C_{G_q}` as a polynomial in the entries of `ρ`, one monomial per table.
#[derive(Debug, Clone)]
pub struct DiagramPolynomial {
    m: usize,
    max_power: usize,
    /// Per level: (q, monomials as (exponents in row-major `m×m`, coefficient)).
    levels: Vec<(usize, Vec<(Vec<u8>, f64)>)>,
}

impl DiagramPolynomial {
    /// Precomputes `Σ_{a,b ∈ level q} c_a c_b E[H̄_a H̄_b]` for every level
    /// `q >= 1` of the expansion.
    pub fn from_expansion(e: &ChaosExpansion) -> Result<Self> {
        let m = e.m;
        let mut budget_left = TABLE_BUDGET;
        let mut levels = Vec::new();
        let mut max_power = 0;
        for (&q, terms) in e.levels.iter().filter(|(&q, _)| q >= 1) {
            if q > MAX_PAIR_ORDER {
                return Err(Error::InvalidArgument(format!("level {q} exceeds {MAX_PAIR_ORDER}")));
            }
            max_power = max_power.max(q);
            let mut monomials = Vec::new();
            for ta in terms {
                for tb in terms {
                    let coef = ta.coefficient * tb.coefficient;
                    let used = for_each_table(
                        ta.index.exponents(),
                        tb.index.exponents(),
                        budget_left,
                        |k| {
                            let w = table_weight(&ta.index, &tb.index, k) as f64;
                            monomials.push((k.iter().map(|&v| v as u8).collect(), coef * w));
                        },
                    )?;
                    budget_left -= used;
                }
            }
            levels.push((q, monomials));
        }
        Ok(DiagramPolynomial {
            m,
            max_power,
            levels,
        })
    }

    pub fn levels(&self) -> impl Iterator<Item = usize> + '_ {
        self.levels.iter().map(|(q, _)| *q)
    }

    /// Per-level values `C_{G_q}(ρ)`, in the order of [`Self::levels`].
    pub fn eval_levels(&self, rho: &DMatrix<f64>) -> Vec<f64> {
        let m = self.m;
        let p = self.max_power + 1;
        let mut powers = vec![1.0; m * m * p];
        for i in 0..m {
            for j in 0..m {
                let base = (i * m + j) * p;
                for e in 1..p {
                    powers[base + e] = powers[base + e - 1] * rho[(i, j)];
                }
            }
        }
        self.levels
            .iter()
            .map(|(_, monos)| {
                monos
                    .iter()
                    .map(|(exps, c)| {
                        exps.iter()
                            .enumerate()
                            .fold(*c, |acc, (cell, &e)| acc * powers[cell * p + e as usize])
                    })
                    .sum()
            })
            .collect()
    }
}
