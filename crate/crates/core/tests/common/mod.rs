//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use std::collections::BTreeMap;

use nalgebra::DMatrix;

/// Coefficients of `H_n` in the monomial basis, from the explicit sum
/// `H_n(x) = n! Σ_j (-1)^j x^{n-2j} / (j! (n-2j)! 2^j)`.
pub fn hermite_monomials(n: usize) -> Vec<f64> {
    let fact = |k: usize| (1..=k).map(|v| v as f64).product::<f64>();
    let mut c = vec![0.0; n + 1];
    for j in 0..=n / 2 {
        let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
        c[n - 2 * j] = sign * fact(n) / (fact(j) * fact(n - 2 * j) * 2f64.powi(j as i32));
    }
    c
}

/// `E[Π_i Z_{v_i}]` for a centred Gaussian vector with covariance `cov`,
/// by summing over all perfect matchings of the index list (Isserlis).
pub fn isserlis(vars: &[usize], cov: &DMatrix<f64>) -> f64 {
    if vars.is_empty() {
        return 1.0;
    }
    if vars.len() % 2 == 1 {
        return 0.0;
    }
    let first = vars[0];
    let mut total = 0.0;
    for k in 1..vars.len() {
        let c = cov[(first, vars[k])];
        if c == 0.0 {
            continue;
        }
        let rest: Vec<usize> = vars[1..]
            .iter()
            .enumerate()
            .filter(|&(i, _)| i + 1 != k)
            .map(|(_, &v)| v)
            .collect();
        total += c * isserlis(&rest, cov);
    }
    total
}

/// Isserlis over `X ∪ Y` (variables `0..m` are `X`, `m..2m` are `Y`), kept
/// symbolic: a polynomial in the entries of `ρ`, keyed by exponent tables
/// (row-major `m × m`), with exact integer coefficients.
fn isserlis_symbolic(vars: &[usize], m: usize) -> BTreeMap<Vec<u32>, i128> {
    let mut out = BTreeMap::new();
    if vars.is_empty() {
        out.insert(vec![0; m * m], 1);
        return out;
    }
    if vars.len() % 2 == 1 {
        return out;
    }
    let u = vars[0];
    for k in 1..vars.len() {
        let v = vars[k];
        let cross = match (u < m, v < m) {
            (true, false) => Some(u * m + (v - m)),
            (false, true) => Some(v * m + (u - m)),
            _ if u == v => None,
            _ => continue,
        };
        let rest: Vec<usize> = vars[1..]
            .iter()
            .enumerate()
            .filter(|&(i, _)| i + 1 != k)
            .map(|(_, &w)| w)
            .collect();
        for (mut e, c) in isserlis_symbolic(&rest, m) {
            if let Some(idx) = cross {
                e[idx] += 1;
            }
            *out.entry(e).or_insert(0) += c;
        }
    }
    out
}

/// `E[H̄_a(X) H̄_b(Y)]` for `(X, Y)` with covariance `[[I, ρ], [ρᵀ, I]]`:
/// both Hermite products are expanded into monomials, each moment is taken
/// by Isserlis symbolically, and the collected polynomial in `ρ` is evaluated
/// last so that cancellations happen in exact arithmetic.
pub fn pair_expectation_oracle(a: &[usize], b: &[usize], rho: &DMatrix<f64>) -> f64 {
    let m = a.len();
    // Monomials: (integer coefficient, exponent per variable in 0..2m).
    let mut terms: Vec<(i128, Vec<usize>)> = vec![(1, vec![0; 2 * m])];
    for (var, &deg) in a.iter().chain(b.iter()).enumerate() {
        let poly = hermite_monomials(deg);
        let mut next = Vec::new();
        for (c, e) in &terms {
            for (p, &pc) in poly.iter().enumerate() {
                if pc == 0.0 {
                    continue;
                }
                let mut e2 = e.clone();
                e2[var] += p;
                next.push((c * pc as i128, e2));
            }
        }
        terms = next;
    }
    let mut poly: BTreeMap<Vec<u32>, i128> = BTreeMap::new();
    for (c, e) in &terms {
        let vars: Vec<usize> = e
            .iter()
            .enumerate()
            .flat_map(|(v, &k)| std::iter::repeat_n(v, k))
            .collect();
        for (k, v) in isserlis_symbolic(&vars, m) {
            *poly.entry(k).or_insert(0) += c * v;
        }
    }
    poly.iter()
        .filter(|(_, &c)| c != 0)
        .map(|(e, &c)| {
            e.iter()
                .enumerate()
                .fold(c as f64, |acc, (idx, &p)| acc * rho[(idx / m, idx % m)].powi(p as i32))
        })
        .sum()
}

/// Deterministic uniform stream for test inputs (SplitMix64).
pub struct Uniform(u64);

impl Uniform {
    pub fn new(seed: u64) -> Self {
        Uniform(seed)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.0 = self.0.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.0;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform on `[lo, hi)`.
    pub fn range(&mut self, lo: f64, hi: f64) -> f64 {
        let u = (self.next_u64() >> 11) as f64 / (1u64 << 53) as f64;
        lo + (hi - lo) * u
    }
}

/// Random `ρ` with spectral norm `< 1`, hence a feasible cross-covariance.
pub fn random_feasible_rho(m: usize, rng: &mut Uniform) -> DMatrix<f64> {
    let a = DMatrix::from_fn(m, m, |_, _| rng.range(-1.0, 1.0));
    let norm = a.clone().svd(false, false).singular_values.max();
    let scale = rng.range(0.05, 0.98);
    a * (scale / norm.max(1e-12))
}

/// Composite Simpson rule on `[lo, hi]` with `intervals` (even) panels.
pub fn simpson<F: Fn(f64) -> f64>(f: F, lo: f64, hi: f64, intervals: usize) -> f64 {
    let h = (hi - lo) / intervals as f64;
    let mut s = f(lo) + f(hi);
    for i in 1..intervals {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        s += w * f(lo + i as f64 * h);
    }
    s * h / 3.0
}

pub fn phi(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}
