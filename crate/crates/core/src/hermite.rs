//! Probabilists' Hermite polynomials and multi-indices.
//!
//! `H_n` is orthogonal for the standard normal weight `φ(x) = e^{-x²/2}/√(2π)`
//! with `∫ H_p H_q φ = δ_pq p!`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::factorial_u128;

/// Largest degree accepted by [`hermite_eval`].
pub const MAX_HERMITE_DEGREE: usize = 60;

/// `H_n(x)` via `H_{n+1} = x H_n - n H_{n-1}`.
pub fn hermite_eval(n: usize, x: f64) -> Result<f64> {
    if n > MAX_HERMITE_DEGREE {
        return Err(Error::UnsupportedDegree {
            degree: n,
            max: MAX_HERMITE_DEGREE,
        });
    }
    Ok(hermite_unchecked(n, x))
}

pub(crate) fn hermite_unchecked(n: usize, x: f64) -> f64 {
    let mut prev = 0.0;
    let mut cur = 1.0;
    for k in 0..n {
        let next = x * cur - k as f64 * prev;
        prev = cur;
        cur = next;
    }
    cur
}

/// Fills `out[k] = H_k(x)` for `k = 0..out.len()`.
pub(crate) fn hermite_table(x: f64, out: &mut [f64]) {
    if out.is_empty() {
        return;
    }
    out[0] = 1.0;
    if out.len() > 1 {
        out[1] = x;
    }
    for k in 1..out.len().saturating_sub(1) {
        out[k + 1] = x * out[k] - k as f64 * out[k - 1];
    }
}

/// Exponent vector `a = (a_1, …, a_m)`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MultiIndex(Vec<usize>);

impl MultiIndex {
    pub fn new(exponents: Vec<usize>) -> Self {
        MultiIndex(exponents)
    }

    pub fn zeros(m: usize) -> Self {
        MultiIndex(vec![0; m])
    }

    /// Multi-index with a single nonzero entry.
    pub fn unit(m: usize, axis: usize, power: usize) -> Self {
        let mut v = vec![0; m];
        v[axis] = power;
        MultiIndex(v)
    }

    pub fn exponents(&self) -> &[usize] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    /// `|a| = Σ a_i`.
    pub fn order(&self) -> usize {
        self.0.iter().sum()
    }

    /// `a! = Π a_i!`, exact.
    pub fn factorial(&self) -> u128 {
        self.0.iter().map(|&k| factorial_u128(k)).product()
    }

    pub fn factorial_f64(&self) -> f64 {
        self.factorial() as f64
    }

    /// All multi-indices of dimension `m` with `|a| = q`, i.e. the set `𝓘_q`,
    /// in reverse-lexicographic order (`(q,0,…)` first).
    pub fn of_order(m: usize, q: usize) -> Vec<MultiIndex> {
        let mut out = Vec::new();
        let mut cur = vec![0; m];
        fn rec(pos: usize, remaining: usize, cur: &mut Vec<usize>, out: &mut Vec<MultiIndex>) {
            let m = cur.len();
            if pos + 1 == m {
                cur[pos] = remaining;
                out.push(MultiIndex(cur.clone()));
                return;
            }
            for k in (0..=remaining).rev() {
                cur[pos] = k;
                rec(pos + 1, remaining - k, cur, out);
            }
            cur[pos] = 0;
        }
        if m == 0 {
            if q == 0 {
                out.push(MultiIndex(Vec::new()));
            }
            return out;
        }
        rec(0, q, &mut cur, &mut out);
        out
    }
}

impl From<Vec<usize>> for MultiIndex {
    fn from(v: Vec<usize>) -> Self {
        MultiIndex(v)
    }
}

/// `H̄_a(x) = Π H_{a_i}(x_i)`.
pub fn multi_hermite_eval(a: &MultiIndex, x: &[f64]) -> Result<f64> {
    if a.dim() != x.len() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            got: x.len(),
        });
    }
    a.0.iter()
        .zip(x)
        .try_fold(1.0, |acc, (&k, &xi)| Ok(acc * hermite_eval(k, xi)?))
}
