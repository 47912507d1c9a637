//! Shared numerical kernels: deterministic summation, exact factorials,
//! Gauss–Hermite rules for the standard normal weight and a tensor-product
//! trapezoid integrator with step halving.

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;

use crate::error::{Error, Result};

/// Pairwise (cascade) summation. The reduction tree depends only on the
/// slice length, so the result is independent of how the inputs were produced.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    const LEAF: usize = 32;
    if xs.len() <= LEAF {
        return xs.iter().sum();
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

/// `n!` as an exact integer. Valid for `n <= 34`.
pub fn factorial_u128(n: usize) -> u128 {
    assert!(n <= 34, "factorial overflow for n = {n}");
    (1..=n as u128).product()
}

pub fn factorial(n: usize) -> f64 {
    if n <= 34 {
        factorial_u128(n) as f64
    } else {
        (1..=n).map(|k| k as f64).product()
    }
}

/// Gauss–Hermite rule for the probability measure `γ(dx) = φ(x) dx`
/// (probabilists' normalization, weights sum to one).
#[derive(Debug, Clone, PartialEq)]
pub struct GaussHermite {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussHermite {
    /// Golub–Welsch on the Jacobi matrix of `He_k`, followed by Newton
    /// polishing with the orthonormal recurrence. Weights come from the
    /// Christoffel function `1 / Σ_k p_k(x)²`, which is stable for large orders.
    pub fn new(order: usize) -> Self {
        assert!(order >= 1, "Gauss-Hermite order must be positive");
        if order == 1 {
            return GaussHermite {
                nodes: vec![0.0],
                weights: vec![1.0],
            };
        }
        let mut jacobi = DMatrix::<f64>::zeros(order, order);
        for k in 1..order {
            let b = (k as f64).sqrt();
            jacobi[(k - 1, k)] = b;
            jacobi[(k, k - 1)] = b;
        }
        let eig = SymmetricEigen::new(jacobi);
        let mut nodes: Vec<f64> = eig.eigenvalues.iter().copied().collect();
        nodes.sort_by(|a, b| a.partial_cmp(b).unwrap());

        for x in nodes.iter_mut() {
            for _ in 0..3 {
                let (p, p_prev) = orthonormal_pair(order, *x);
                let dp = (order as f64).sqrt() * p_prev;
                if dp == 0.0 {
                    break;
                }
                *x -= p / dp;
            }
        }
        // Exact symmetry about the origin.
        for i in 0..order / 2 {
            let j = order - 1 - i;
            let v = 0.5 * (nodes[j] - nodes[i]);
            nodes[i] = -v;
            nodes[j] = v;
        }
        if order % 2 == 1 {
            nodes[order / 2] = 0.0;
        }

        let mut weights: Vec<f64> = nodes
            .iter()
            .map(|&x| {
                let mut p_prev = 0.0;
                let mut p = 1.0;
                let mut s = 1.0;
                for k in 0..order - 1 {
                    let next = (x * p - (k as f64).sqrt() * p_prev) / ((k + 1) as f64).sqrt();
                    p_prev = p;
                    p = next;
                    s += p * p;
                }
                1.0 / s
            })
            .collect();
        let total = pairwise_sum(&weights);
        for w in weights.iter_mut() {
            *w /= total;
        }
        GaussHermite { nodes, weights }
    }

    /// Rule for `γ` with `order` nodes split evenly between `(-∞, c]` and
    /// `[c, ∞)`, each half a Gaussian rule for the restricted measure. It is
    /// exact for functions that are polynomial of degree `< order` on each
    /// side of `c`, so kinks and jumps at `c` cost nothing. Falls back to
    /// [`GaussHermite::new`] when `|c| > 8` (one side carries no mass).
    pub fn split(order: usize, c: f64) -> Self {
        if order < 2 || !c.is_finite() || c.abs() > 8.0 {
            return Self::new(order.max(1));
        }
        let right_count = order.div_ceil(2);
        let left_count = order - right_count;
        let (rx, rw) = half_line_rule(right_count, c);
        let (lx, lw) = half_line_rule(left_count, -c);
        let mut nodes: Vec<f64> = lx.iter().rev().map(|x| -x).collect();
        let mut weights: Vec<f64> = lw.iter().rev().copied().collect();
        nodes.extend(rx);
        weights.extend(rw);
        let total = pairwise_sum(&weights);
        for w in weights.iter_mut() {
            *w /= total;
        }
        GaussHermite { nodes, weights }
    }

    pub fn order(&self) -> usize {
        self.nodes.len()
    }

    pub fn integrate<F: Fn(f64) -> f64>(&self, f: F) -> f64 {
        let terms: Vec<f64> = self
            .nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * f(x))
            .collect();
        pairwise_sum(&terms)
    }
}

/// Gaussian rule with `count` nodes for `φ(x) dx` restricted to `[c, ∞)`;
/// weights carry the restricted mass. Recurrence coefficients come from the
/// Stieltjes procedure on a composite Gauss–Legendre discretization of the
/// measure, then Golub–Welsch.
fn half_line_rule(count: usize, c: f64) -> (Vec<f64>, Vec<f64>) {
    if count == 0 {
        return (Vec::new(), Vec::new());
    }
    const PANELS: usize = 600;
    const PANEL_ORDER: usize = 24;
    let upper = c.max(0.0) + 40.0;
    let (gx, gw) = gauss_legendre(PANEL_ORDER);
    let width = (upper - c) / PANELS as f64;
    let mut xs = Vec::with_capacity(PANELS * PANEL_ORDER);
    let mut ws = Vec::with_capacity(PANELS * PANEL_ORDER);
    let norm = 1.0 / (2.0 * std::f64::consts::PI).sqrt();
    for p in 0..PANELS {
        let mid = c + (p as f64 + 0.5) * width;
        for (u, w) in gx.iter().zip(&gw) {
            let x = mid + 0.5 * width * u;
            xs.push(x);
            ws.push(0.5 * width * w * norm * (-0.5 * x * x).exp());
        }
    }
    let mass = pairwise_sum(&ws);

    // Lanczos/Stieltjes with normalized vectors.
    let len = xs.len();
    let mut q_prev = vec![0.0; len];
    let mut q: Vec<f64> = vec![1.0 / mass.sqrt(); len];
    let mut alpha = Vec::with_capacity(count);
    let mut beta = Vec::with_capacity(count);
    let mut b_prev = 0.0;
    for k in 0..count {
        let a: f64 = (0..len).map(|i| ws[i] * xs[i] * q[i] * q[i]).sum();
        alpha.push(a);
        if k + 1 == count {
            break;
        }
        let mut next: Vec<f64> = (0..len)
            .map(|i| (xs[i] - a) * q[i] - b_prev * q_prev[i])
            .collect();
        let b = (0..len).map(|i| ws[i] * next[i] * next[i]).sum::<f64>().sqrt();
        for v in next.iter_mut() {
            *v /= b;
        }
        beta.push(b);
        b_prev = b;
        q_prev = std::mem::replace(&mut q, next);
    }
    let mut jacobi = DMatrix::<f64>::zeros(count, count);
    for k in 0..count {
        jacobi[(k, k)] = alpha[k];
        if k + 1 < count {
            jacobi[(k, k + 1)] = beta[k];
            jacobi[(k + 1, k)] = beta[k];
        }
    }
    let eig = SymmetricEigen::new(jacobi);
    let mut pairs: Vec<(f64, f64)> = (0..count)
        .map(|j| (eig.eigenvalues[j], mass * eig.eigenvectors[(0, j)].powi(2)))
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    pairs.into_iter().unzip()
}

/// Gauss–Legendre nodes and weights on `[-1, 1]`.
fn gauss_legendre(order: usize) -> (Vec<f64>, Vec<f64>) {
    let mut jacobi = DMatrix::<f64>::zeros(order, order);
    for k in 1..order {
        let kf = k as f64;
        let b = kf / (4.0 * kf * kf - 1.0).sqrt();
        jacobi[(k - 1, k)] = b;
        jacobi[(k, k - 1)] = b;
    }
    let eig = SymmetricEigen::new(jacobi);
    let mut pairs: Vec<(f64, f64)> = (0..order)
        .map(|j| (eig.eigenvalues[j], 2.0 * eig.eigenvectors[(0, j)].powi(2)))
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    pairs.into_iter().unzip()
}

/// Orthonormal Hermite values `(p_n(x), p_{n-1}(x))` with `p_k = He_k / √k!`.
fn orthonormal_pair(n: usize, x: f64) -> (f64, f64) {
    let mut p_prev = 0.0;
    let mut p = 1.0;
    for k in 0..n {
        let next = (x * p - (k as f64).sqrt() * p_prev) / ((k + 1) as f64).sqrt();
        p_prev = p;
        p = next;
    }
    (p, p_prev)
}

/// Outcome of a step-halving tensor trapezoid integration.
#[derive(Debug, Clone)]
pub struct BoxIntegral {
    pub values: Vec<f64>,
    /// Max-norm change between the last two refinements.
    pub last_change: f64,
    pub intervals_per_axis: usize,
    pub evaluations: usize,
}

/// Integrates a vector-valued `f` over `[-half_width, half_width]^dim` with
/// the tensor trapezoid rule, halving the step until successive estimates
/// differ by less than `rel_tol` (relative to the max-norm of the estimate)
/// or the point budget is exhausted.
///
/// The origin is always a grid node, so integrands with a kink at zero keep
/// second-order accuracy.
pub fn integrate_box<F>(
    dim: usize,
    half_width: f64,
    components: usize,
    rel_tol: f64,
    max_points: usize,
    f: F,
) -> Result<BoxIntegral>
where
    F: Fn(&[f64]) -> Vec<f64> + Sync,
{
    if dim == 0 {
        return Err(Error::InvalidArgument("integration dimension must be >= 1".into()));
    }
    if half_width <= 0.0 {
        return Ok(BoxIntegral {
            values: vec![0.0; components],
            last_change: 0.0,
            intervals_per_axis: 0,
            evaluations: 0,
        });
    }
    let mut intervals = 16usize;
    let mut previous = trapezoid_grid(dim, half_width, intervals, components, &f);
    let mut evaluations = (intervals + 1).pow(dim as u32);
    loop {
        let next_intervals = intervals * 2;
        let next_points = (next_intervals + 1).pow(dim as u32);
        if evaluations + next_points > max_points {
            return Err(Error::QuadratureBudget(format!(
                "no convergence to {rel_tol:e} within {max_points} evaluations \
                 ({intervals} intervals per axis reached)"
            )));
        }
        let current = trapezoid_grid(dim, half_width, next_intervals, components, &f);
        evaluations += next_points;
        intervals = next_intervals;
        let change = current
            .iter()
            .zip(&previous)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        let scale = current.iter().map(|v| v.abs()).fold(0.0, f64::max);
        previous = current;
        if change <= rel_tol * scale || change == 0.0 {
            return Ok(BoxIntegral {
                values: previous,
                last_change: change,
                intervals_per_axis: intervals,
                evaluations,
            });
        }
    }
}

/// Single tensor trapezoid sum on a uniform grid with `intervals` cells per axis.
pub fn trapezoid_grid<F>(
    dim: usize,
    half_width: f64,
    intervals: usize,
    components: usize,
    f: &F,
) -> Vec<f64>
where
    F: Fn(&[f64]) -> Vec<f64> + Sync,
{
    let points = intervals + 1;
    let h = 2.0 * half_width / intervals as f64;
    let total = points.pow(dim as u32);
    let cell = h.powi(dim as i32);
    let rows: Vec<Vec<f64>> = (0..total)
        .into_par_iter()
        .map(|flat| {
            let mut x = vec![0.0; dim];
            let mut weight = cell;
            let mut rem = flat;
            for d in (0..dim).rev() {
                let i = rem % points;
                rem /= points;
                x[d] = -half_width + i as f64 * h;
                if i == 0 || i == intervals {
                    weight *= 0.5;
                }
            }
            f(&x).into_iter().map(|v| v * weight).collect()
        })
        .collect();
    (0..components)
        .map(|c| {
            let column: Vec<f64> = rows.iter().map(|r| r[c]).collect();
            pairwise_sum(&column)
        })
        .collect()
}

/// Row-major multi-index iteration helper: decodes `flat` into per-axis indices.
pub fn unravel(mut flat: usize, extent: usize, dim: usize, out: &mut [usize]) {
    for d in (0..dim).rev() {
        out[d] = flat % extent;
        flat /= extent;
    }
}
