//! Small statistics toolbox: normal CDF, Kolmogorov–Smirnov against a centred
//! normal, and delete-one jackknife errors.

use serde::Serialize;
use statrs::function::erf::erfc;

/// `K_{0.99}` of the Kolmogorov distribution.
pub const KS_CRITICAL_1PCT: f64 = 1.628;

pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// `P(K > λ)` for the limiting Kolmogorov distribution.
pub fn kolmogorov_survival(lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return 1.0;
    }
    if lambda < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=200 {
        let k = k as f64;
        let term = (-2.0 * k * k * lambda * lambda).exp();
        sum += if k as u64 % 2 == 1 { term } else { -term };
        if term < 1e-17 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Serialize)]
pub struct KsResult {
    pub statistic: f64,
    /// `1.628 / √N`.
    pub critical_1pct: f64,
    /// Asymptotic p-value with the Stephens small-sample correction.
    pub p_value: f64,
    pub samples: usize,
}

impl KsResult {
    pub fn pass(&self) -> bool {
        self.statistic <= self.critical_1pct
    }
}

/// One-sample KS distance between `data` and `N(0, variance)`.
pub fn ks_normal(data: &[f64], variance: f64) -> KsResult {
    let mut xs: Vec<f64> = data.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    let sd = variance.max(0.0).sqrt();
    let mut d: f64 = 0.0;
    for (i, &x) in xs.iter().enumerate() {
        let f = if sd > 0.0 {
            normal_cdf(x / sd)
        } else if x < 0.0 {
            0.0
        } else {
            1.0
        };
        d = d.max(f - i as f64 / n).max((i + 1) as f64 / n - f);
    }
    let root = n.sqrt();
    KsResult {
        statistic: d,
        critical_1pct: KS_CRITICAL_1PCT / root,
        p_value: kolmogorov_survival((root + 0.12 + 0.11 / root) * d),
        samples: xs.len(),
    }
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance.
pub fn sample_variance(xs: &[f64]) -> f64 {
    let mu = mean(xs);
    xs.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / (xs.len() as f64 - 1.0)
}

/// Delete-one jackknife of an arbitrary statistic: `(estimate, stderr)`.
pub fn jackknife<F>(xs: &[f64], stat: F) -> (f64, f64)
where
    F: Fn(&[f64]) -> f64,
{
    let n = xs.len();
    let full = stat(xs);
    if n < 2 {
        return (full, f64::NAN);
    }
    let mut buf = Vec::with_capacity(n - 1);
    let leave: Vec<f64> = (0..n)
        .map(|i| {
            buf.clear();
            buf.extend(xs.iter().enumerate().filter(|&(j, _)| j != i).map(|(_, &x)| x));
            stat(&buf)
        })
        .collect();
    let lm = mean(&leave);
    let var = leave.iter().map(|v| (v - lm).powi(2)).sum::<f64>() * (n as f64 - 1.0) / n as f64;
    (full, var.sqrt())
}

/// Jackknife of the mean, in closed form (equal to `sd / √n`).
pub fn jackknife_mean(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n < 2 {
        return (xs.first().copied().unwrap_or(f64::NAN), f64::NAN);
    }
    (mean(xs), (sample_variance(xs) / n as f64).sqrt())
}

pub fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let k = v.len();
    if k % 2 == 1 {
        v[k / 2]
    } else {
        0.5 * (v[k / 2 - 1] + v[k / 2])
    }
}
