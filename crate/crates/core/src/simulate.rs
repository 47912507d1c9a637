//! Spectral synthesis of jointly stationary Gaussian vector fields on regular
//! grids, persistence of samples, and empirical covariance estimates.
//!
//! A sample on `[-s,s]^n` with `N` cells per axis is drawn on the doubled
//! domain `[-2s,2s]^n` (`M = 2N` cells, same spacing `h`) and cropped to the
//! central block, which keeps periodic wrap-around away from lags `< s`.
//!
//! Frequencies are `t_k = 2π k / (M h)` with `k ∈ [-M/2, M/2)` per axis. For
//! every pair `{k, -k mod M}` the canonical member (smaller flat index) gets
//! `d_k = L(t_k) Z_k √Δt`, with `Z_k` a vector of complex normals
//! (`E|Z|² = 1`), and the partner gets `conj(d_k)`. Self-conjugate bins (every
//! component `0` or `-M/2`, i.e. zero frequency and Nyquist) receive a real
//! standard normal with the same weight. The field is the unnormalized inverse
//! DFT of `d`, which is real by construction; the residual imaginary part is
//! reported as a check.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::unravel;
use crate::rng::CounterNormals;
use crate::spectral::{SpectralModel, MAX_SPATIAL_DIM};
use crate::stats::jackknife_mean;

pub const MAGIC: [u8; 4] = *b"BMF1";
pub const MAX_SITES: usize = 1 << 24;

/// Cell-centred grid over `[-s,s]^n`: site `i` sits at `-s + (i + ½) h`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub n: usize,
    pub s: f64,
    pub points_per_axis: usize,
}

impl GridSpec {
    pub fn new(n: usize, s: f64, points_per_axis: usize) -> Result<Self> {
        let g = GridSpec {
            n,
            s,
            points_per_axis,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.n > MAX_SPATIAL_DIM {
            return Err(Error::UnsupportedDimension {
                what: "n",
                value: self.n,
                max: MAX_SPATIAL_DIM,
            });
        }
        if !(self.s > 0.0 && self.s.is_finite()) {
            return Err(Error::Grid(format!("half-width must be positive, got {}", self.s)));
        }
        let n_pts = self.points_per_axis;
        if n_pts < 8 || !n_pts.is_power_of_two() {
            return Err(Error::Grid(format!(
                "points per axis must be a power of two >= 8, got {n_pts}"
            )));
        }
        if n_pts.checked_pow(self.n as u32).is_none_or(|t| t > MAX_SITES) {
            return Err(Error::Grid(format!(
                "{n_pts}^{} sites exceed the budget of {MAX_SITES}",
                self.n
            )));
        }
        Ok(())
    }

    pub fn spacing(&self) -> f64 {
        2.0 * self.s / self.points_per_axis as f64
    }

    pub fn sites(&self) -> usize {
        self.points_per_axis.pow(self.n as u32)
    }

    /// Coordinate of index `i` along one axis.
    pub fn coordinate(&self, i: usize) -> f64 {
        -self.s + (i as f64 + 0.5) * self.spacing()
    }

    /// Highest frequency represented by the grid, `π/h`.
    pub fn nyquist(&self) -> f64 {
        std::f64::consts::PI / self.spacing()
    }

    /// Smallest power-of-two grid whose Nyquist frequency covers `t_max`.
    pub fn covering(n: usize, s: f64, t_max: f64) -> Result<Self> {
        let mut pts = 8usize;
        while std::f64::consts::PI * pts as f64 / (2.0 * s) < t_max {
            pts *= 2;
        }
        GridSpec::new(n, s, pts)
    }
}

#[derive(Debug, Clone)]
pub struct FieldSample {
    pub grid: GridSpec,
    pub m: usize,
    /// Row-major sites, channels interleaved: `values[site * m + channel]`.
    pub values: Vec<f64>,
    pub seed: u64,
    pub model_id: String,
    /// `max |Im|` of the inverse transform before the real projection.
    pub max_imag_residue: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SampleSidecar {
    pub seed: u64,
    pub model_id: String,
    pub grid: SidecarGrid,
    pub m: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SidecarGrid {
    pub n: usize,
    pub s: f64,
    pub points_per_axis: usize,
    pub spacing: f64,
}

impl FieldSample {
    pub fn value(&self, site: usize, channel: usize) -> f64 {
        self.values[site * self.m + channel]
    }

    pub fn site_vector(&self, site: usize) -> &[f64] {
        &self.values[site * self.m..(site + 1) * self.m]
    }

    /// Flat binary: `BMF1`, then `n`, `m`, `N` as little-endian `u32`, then
    /// the values as little-endian `f64`.
    pub fn write_binary<W: Write>(&self, mut out: W) -> Result<()> {
        out.write_all(&MAGIC)?;
        for v in [self.grid.n, self.m, self.grid.points_per_axis] {
            out.write_all(&(v as u32).to_le_bytes())?;
        }
        for v in &self.values {
            out.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn sidecar(&self) -> SampleSidecar {
        SampleSidecar {
            seed: self.seed,
            model_id: self.model_id.clone(),
            grid: SidecarGrid {
                n: self.grid.n,
                s: self.grid.s,
                points_per_axis: self.grid.points_per_axis,
                spacing: self.grid.spacing(),
            },
            m: self.m,
        }
    }

    /// Writes `<stem>.bin` and `<stem>.json`.
    pub fn save(&self, dir: &Path, stem: &str) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let bin = BufWriter::new(File::create(dir.join(format!("{stem}.bin")))?);
        self.write_binary(bin)?;
        let json = serde_json::to_string_pretty(&self.sidecar())?;
        std::fs::write(dir.join(format!("{stem}.json")), json)?;
        Ok(())
    }

    pub fn load(dir: &Path, stem: &str) -> Result<Self> {
        let side: SampleSidecar =
            serde_json::from_str(&std::fs::read_to_string(dir.join(format!("{stem}.json")))?)?;
        let mut bytes = Vec::new();
        BufReader::new(File::open(dir.join(format!("{stem}.bin")))?).read_to_end(&mut bytes)?;
        Self::from_binary(&bytes, &side)
    }

    pub fn from_binary(bytes: &[u8], side: &SampleSidecar) -> Result<Self> {
        if bytes.len() < 16 || bytes[..4] != MAGIC {
            return Err(Error::Grid("not a field sample file".into()));
        }
        let word = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize;
        let (n, m, pts) = (word(0), word(1), word(2));
        let grid = GridSpec::new(n, side.grid.s, pts)?;
        if side.grid.n != n || side.grid.points_per_axis != pts || side.m != m {
            return Err(Error::Grid("header and sidecar disagree".into()));
        }
        let expected = grid.sites() * m;
        let body = &bytes[16..];
        if body.len() != expected * 8 {
            return Err(Error::Grid(format!(
                "expected {expected} values, found {} bytes",
                body.len()
            )));
        }
        let values = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(FieldSample {
            grid,
            m,
            values,
            seed: side.seed,
            model_id: side.model_id.clone(),
            max_imag_residue: 0.0,
        })
    }
}

/// In-place unnormalized inverse DFT over an `extent^dim` row-major array.
fn inverse_fft_nd(data: &mut [Complex64], extent: usize, dim: usize, planner: &mut FftPlanner<f64>) {
    let fft = planner.plan_fft_inverse(extent);
    let mut line = vec![Complex64::new(0.0, 0.0); extent];
    let mut scratch = vec![Complex64::new(0.0, 0.0); fft.get_inplace_scratch_len()];
    for axis in 0..dim {
        let stride = extent.pow((dim - 1 - axis) as u32);
        let outer = data.len() / (extent * stride);
        for o in 0..outer {
            for inner in 0..stride {
                let base = o * extent * stride + inner;
                for (i, v) in line.iter_mut().enumerate() {
                    *v = data[base + i * stride];
                }
                fft.process_with_scratch(&mut line, &mut scratch);
                for (i, v) in line.iter().enumerate() {
                    data[base + i * stride] = *v;
                }
            }
        }
    }
}

fn signed(k: usize, extent: usize) -> isize {
    if k < extent / 2 {
        k as isize
    } else {
        k as isize - extent as isize
    }
}

/// Draws one field sample. Deterministic in `(spec, grid, seed)`.
pub fn simulate(spec: &SpectralModel, grid: &GridSpec, seed: u64) -> Result<FieldSample> {
    grid.validate()?;
    if spec.n != grid.n {
        return Err(Error::DimensionMismatch {
            expected: spec.n,
            got: grid.n,
        });
    }
    if grid.nyquist() < spec.t_max {
        return Err(Error::Grid(format!(
            "frequency grid too coarse: Nyquist {} < T_max {}",
            grid.nyquist(),
            spec.t_max
        )));
    }
    let (n, m) = (grid.n, spec.m);
    let extent = 2 * grid.points_per_axis;
    let total = extent
        .checked_pow(n as u32)
        .filter(|&t| t <= 8 * MAX_SITES)
        .ok_or_else(|| Error::Grid("FFT size exceeds the budget".into()))?;
    let h = grid.spacing();
    let dt = 2.0 * std::f64::consts::PI / (extent as f64 * h);
    let weight = dt.powi(n as i32).sqrt();
    let p = spec.noise_count();

    let mut coeffs = vec![vec![Complex64::new(0.0, 0.0); total]; m];
    let mut normals = CounterNormals::new(seed);
    let mut idx = vec![0usize; n];
    let mut t = vec![0.0; n];
    for flat in 0..total {
        unravel(flat, extent, n, &mut idx);
        let partner = idx
            .iter()
            .fold(0usize, |acc, &k| acc * extent + (extent - k) % extent);
        if partner < flat {
            continue;
        }
        for d in 0..n {
            t[d] = signed(idx[d], extent) as f64 * dt;
        }
        let factor = spec.factor(&t)?;
        let self_conjugate = partner == flat;
        let z: Vec<Complex64> = (0..p)
            .map(|c| {
                let (a, b) = normals.pair((flat * p + c) as u64);
                if self_conjugate {
                    Complex64::new(a, 0.0)
                } else {
                    Complex64::new(a, b) * std::f64::consts::FRAC_1_SQRT_2
                }
            })
            .collect();
        for (j, channel) in coeffs.iter_mut().enumerate() {
            let mut d = Complex64::new(0.0, 0.0);
            for (c, zc) in z.iter().enumerate() {
                d += zc * factor[(j, c)];
            }
            d *= weight;
            channel[flat] = d;
            if !self_conjugate {
                channel[partner] = d.conj();
            }
        }
    }

    let mut planner = FftPlanner::new();
    let n_pts = grid.points_per_axis;
    let offset = n_pts / 2;
    let sites = grid.sites();
    let mut values = vec![0.0; sites * m];
    let mut max_imag: f64 = 0.0;
    let mut site_idx = vec![0usize; n];
    for (j, channel) in coeffs.iter_mut().enumerate() {
        inverse_fft_nd(channel, extent, n, &mut planner);
        for site in 0..sites {
            unravel(site, n_pts, n, &mut site_idx);
            let src = site_idx
                .iter()
                .fold(0usize, |acc, &i| acc * extent + i + offset);
            let v = channel[src];
            max_imag = max_imag.max(v.im.abs());
            values[site * m + j] = v.re;
        }
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Spectral("simulated field is not finite".into()));
    }
    Ok(FieldSample {
        grid: *grid,
        m,
        values,
        seed,
        model_id: spec.label.clone(),
        max_imag_residue: max_imag,
    })
}

/// Exact covariance of the synthesized (periodic) field at a grid offset:
/// `Σ_k f(t_k) Δt^n cos(⟨t_k, lag·h⟩)` over the doubled-domain frequency grid.
pub fn discrete_covariance(spec: &SpectralModel, grid: &GridSpec, lag: &[isize]) -> Result<DMatrix<f64>> {
    let n = grid.n;
    let extent = 2 * grid.points_per_axis;
    let h = grid.spacing();
    let dt = 2.0 * std::f64::consts::PI / (extent as f64 * h);
    let mut acc = DMatrix::zeros(spec.m, spec.m);
    let mut idx = vec![0usize; n];
    let mut t = vec![0.0; n];
    for flat in 0..extent.pow(n as u32) {
        unravel(flat, extent, n, &mut idx);
        let mut phase = 0.0;
        for d in 0..n {
            t[d] = signed(idx[d], extent) as f64 * dt;
            phase += t[d] * lag[d] as f64 * h;
        }
        let l = spec.factor(&t)?;
        acc += (&l * l.transpose()) * phase.cos();
    }
    Ok(acc * dt.powi(n as i32))
}

/// `r̂_jk(lag) = E[ξ_j(x + lag) ξ_k(x)]` with its standard error.
#[derive(Debug, Clone, Serialize)]
pub struct LagEstimate {
    /// Offset in grid steps.
    pub lag: Vec<isize>,
    pub lag_physical: Vec<f64>,
    /// `[j][k]`
    pub estimate: Vec<Vec<f64>>,
    pub stderr: Vec<Vec<f64>>,
    pub pairs_per_sample: usize,
}

/// Empirical cross-covariances over all site pairs at each lag, averaged
/// within each sample, with jackknife standard errors across samples.
pub fn empirical_covariance(samples: &[FieldSample], lags: &[Vec<isize>]) -> Result<Vec<LagEstimate>> {
    empirical_covariance_where(samples, lags, |_| true)
}

/// As [`empirical_covariance`], restricted to base sites `x` (coordinates in
/// grid units) accepted by `keep`.
pub fn empirical_covariance_where<P>(
    samples: &[FieldSample],
    lags: &[Vec<isize>],
    keep: P,
) -> Result<Vec<LagEstimate>>
where
    P: Fn(&[usize]) -> bool,
{
    const MIN_SAMPLES: usize = 30;
    if samples.len() < MIN_SAMPLES {
        return Err(Error::InsufficientReplicates {
            need: MIN_SAMPLES,
            got: samples.len(),
        });
    }
    let grid = samples[0].grid;
    let m = samples[0].m;
    if samples.iter().any(|s| s.grid != grid || s.m != m) {
        return Err(Error::Grid("samples live on heterogeneous grids".into()));
    }
    let (n, pts) = (grid.n, grid.points_per_axis);
    let h = grid.spacing();
    let mut out = Vec::with_capacity(lags.len());
    for lag in lags {
        if lag.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: lag.len(),
            });
        }
        // Base sites x with x + lag inside the grid.
        let mut bases = Vec::new();
        let mut idx = vec![0usize; n];
        for site in 0..grid.sites() {
            unravel(site, pts, n, &mut idx);
            let shifted: Option<usize> = idx.iter().zip(lag).try_fold(0usize, |acc, (&i, &l)| {
                let j = i as isize + l;
                (0..pts as isize).contains(&j).then(|| acc * pts + j as usize)
            });
            if let Some(other) = shifted {
                if keep(&idx) {
                    bases.push((other, site));
                }
            }
        }
        if bases.is_empty() {
            return Err(Error::Grid(format!("lag {lag:?} leaves no site pairs")));
        }
        let per_sample: Vec<Vec<f64>> = samples
            .iter()
            .map(|s| {
                let mut acc = vec![0.0; m * m];
                for &(a, b) in &bases {
                    for j in 0..m {
                        for k in 0..m {
                            acc[j * m + k] += s.value(a, j) * s.value(b, k);
                        }
                    }
                }
                acc.iter().map(|v| v / bases.len() as f64).collect()
            })
            .collect();
        let mut estimate = vec![vec![0.0; m]; m];
        let mut stderr = vec![vec![0.0; m]; m];
        for j in 0..m {
            for k in 0..m {
                let xs: Vec<f64> = per_sample.iter().map(|v| v[j * m + k]).collect();
                let (mean, se) = jackknife_mean(&xs);
                estimate[j][k] = mean;
                stderr[j][k] = se;
            }
        }
        out.push(LagEstimate {
            lag: lag.clone(),
            lag_physical: lag.iter().map(|&l| l as f64 * h).collect(),
            estimate,
            stderr,
            pairs_per_sample: bases.len(),
        });
    }
    Ok(out)
}
