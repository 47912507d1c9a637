//! Experiment configuration: a TOML file with one table per stage.
//!
//! ```toml
//! [functional]
//! name = "product"
//! i = 0
//! j = 1
//!
//! [model]
//! kind = "hermite"        # single-noise Hermite-function amplitudes
//! n = 1
//! orders = [0, 2]
//! lengths = [1.0, 1.0]
//!
//! [grid]
//! s = 200.0
//! points_per_axis = 2048
//!
//! [seeds]
//! base = 20261019
//! replicates = 2000
//! ```
//!
//! Every omitted field takes a documented default, and the resolved config
//! is echoed into each report. Overrides use dotted keys, e.g.
//! `grid.s=100` or `verify.thresholds.ks_coefficient=1.36`.

use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::covariance::CovarianceModel;
use crate::error::{Error, Result};
use crate::functional::FunctionalSpec;
use crate::harness::Thresholds;
use crate::simulate::GridSpec;
use crate::spectral::{HermiteAmplitude, SpectralModel};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub functional: FunctionalSpec,
    pub model: ModelSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridConfig>,
    #[serde(default)]
    pub chaos: ChaosConfig,
    #[serde(default)]
    pub seeds: SeedConfig,
    #[serde(default)]
    pub verify: VerifyConfig,
    #[serde(default)]
    pub out: OutConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelSpec {
    /// Single-noise model: `α = mixing · (ψ_{k_1}, …, ψ_{k_p})`, each factor a
    /// tensor Hermite function with its own length. `mixing` defaults to `Id`.
    Hermite(HermiteModel),
    /// Independent channels, `r_jj(x) = exp(-‖x‖²/(2λ_j²))`.
    Gaussian(ChannelModel),
    /// Independent channels, `r_jj(x) = exp(-‖x‖/λ_j)`.
    Exponential(ChannelModel),
    /// Independent channels, `r_jj(x) = Π_d (1 - |x_d|/λ_j)_+`.
    Triangular(ChannelModel),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HermiteModel {
    pub n: usize,
    pub orders: Vec<usize>,
    pub lengths: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mixing: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelModel {
    pub n: usize,
    pub lengths: Vec<f64>,
}

impl ModelSpec {
    pub fn n(&self) -> usize {
        match self {
            ModelSpec::Hermite(h) => h.n,
            ModelSpec::Gaussian(c) | ModelSpec::Exponential(c) | ModelSpec::Triangular(c) => c.n,
        }
    }

    pub fn m(&self) -> usize {
        match self {
            ModelSpec::Hermite(h) => h.mixing.as_ref().map_or(h.orders.len(), |mx| mx.len()),
            ModelSpec::Gaussian(c) | ModelSpec::Exponential(c) | ModelSpec::Triangular(c) => {
                c.lengths.len()
            }
        }
    }

    pub fn build(&self) -> Result<CovarianceModel> {
        match self {
            ModelSpec::Hermite(h) => {
                if h.orders.len() != h.lengths.len() {
                    return Err(config_error(
                        "model.lengths",
                        format!("{} lengths for {} orders", h.lengths.len(), h.orders.len()),
                    ));
                }
                let amps: Vec<HermiteAmplitude> = h
                    .orders
                    .iter()
                    .zip(&h.lengths)
                    .map(|(&order, &length)| HermiteAmplitude { order, length })
                    .collect();
                let p = amps.len();
                let mixing = match &h.mixing {
                    None => DMatrix::identity(p, p),
                    Some(rows) => {
                        if rows.is_empty() || rows.iter().any(|r| r.len() != p) {
                            return Err(config_error(
                                "model.mixing",
                                format!("every row must have {p} entries"),
                            ));
                        }
                        DMatrix::from_fn(rows.len(), p, |i, j| rows[i][j])
                    }
                };
                CovarianceModel::from_spectral(SpectralModel::single_noise(h.n, amps, mixing)?)
            }
            ModelSpec::Gaussian(c) => CovarianceModel::gaussian(c.n, c.lengths.clone()),
            ModelSpec::Exponential(c) => CovarianceModel::exponential(c.n, c.lengths.clone()),
            ModelSpec::Triangular(c) => CovarianceModel::triangular(c.n, c.lengths.clone()),
        }
    }

    /// Serde loses the field path inside internally tagged enums; this
    /// re-reads the variant body to recover it.
    fn locate_error(value: &toml::Value) -> Option<Error> {
        let mut body = value.as_table()?.clone();
        let kind = body.remove("kind")?;
        let located = |r: std::result::Result<(), serde_path_to_error::Error<toml::de::Error>>| {
            r.err().map(|e| {
                let path = format!("model.{}", e.path());
                config_error(&path, e.into_inner().message())
            })
        };
        match kind.as_str()? {
            "hermite" => located(serde_path_to_error::deserialize::<_, HermiteModel>(body).map(drop)),
            "gaussian" | "exponential" | "triangular" => {
                located(serde_path_to_error::deserialize::<_, ChannelModel>(body).map(drop))
            }
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    /// Half-width of the observation window `[-s,s]^n`.
    pub s: f64,
    /// Power of two; defaults to the smallest grid resolving the spectrum.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub points_per_axis: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChaosConfig {
    pub q_max: usize,
    pub quadrature_order: usize,
    /// Truncation radius for covariance integrals; defaults to the model's
    /// decay radius.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub radius: Option<f64>,
    /// Window half-widths at which `V_s` is tabulated.
    pub finite_windows: Vec<f64>,
}

impl Default for ChaosConfig {
    fn default() -> Self {
        ChaosConfig {
            q_max: 4,
            quadrature_order: crate::chaos::DEFAULT_QUADRATURE_ORDER,
            radius: None,
            finite_windows: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SeedConfig {
    pub base: u64,
    pub replicates: usize,
}

impl Default for SeedConfig {
    fn default() -> Self {
        SeedConfig {
            base: 0,
            replicates: 1000,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifyConfig {
    pub thresholds: Thresholds,
    /// Moment order of the increment test.
    pub p: f64,
    /// The `y` grid is `{j / 2^dyadic_levels}` and increments use all dyadic
    /// neighbours down to that level.
    pub dyadic_levels: u32,
    /// `(y1, y2)` pairs for the finite-dimensional covariance table.
    pub covariance_pairs: Vec<[f64; 2]>,
    /// Lags, in grid steps, checked by `covcheck`.
    pub lags: Vec<Vec<isize>>,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        VerifyConfig {
            thresholds: Thresholds::default(),
            p: 3.0,
            dyadic_levels: 3,
            covariance_pairs: vec![[0.25, 1.0], [0.5, 1.0], [0.25, 0.5]],
            lags: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutConfig {
    pub dir: PathBuf,
    /// Persist every simulated field under `fields/`.
    pub write_fields: bool,
}

impl Default for OutConfig {
    fn default() -> Self {
        OutConfig {
            dir: PathBuf::from("out"),
            write_fields: false,
        }
    }
}

fn config_error(path: &str, message: impl Into<String>) -> Error {
    Error::Config {
        path: path.to_string(),
        message: message.into(),
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text, overrides)
    }

    pub fn parse(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = toml::from_str(text).map_err(|e| config_error(".", e.message()))?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let model = table.get("model").cloned();
        let cfg: ExperimentConfig = serde_path_to_error::deserialize(table).map_err(|e| {
            let path = e.path().to_string();
            if path == "model" {
                if let Some(err) = model.as_ref().and_then(ModelSpec::locate_error) {
                    return err;
                }
            }
            config_error(&path, e.into_inner().message())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Cross-field checks that serde cannot express.
    pub fn validate(&self) -> Result<()> {
        let m = self.model.m();
        self.functional
            .build(m)
            .map_err(|e| config_error("functional", e.to_string()))?;
        let n = self.model.n();
        if n == 0 || n > crate::spectral::MAX_SPATIAL_DIM {
            return Err(config_error("model.n", format!("n must be in 1..=3, got {n}")));
        }
        if let Some(g) = &self.grid {
            if !(g.s > 0.0 && g.s.is_finite()) {
                return Err(config_error("grid.s", "must be positive"));
            }
            if let Some(p) = g.points_per_axis {
                GridSpec::new(n, g.s, p).map_err(|e| config_error("grid.points_per_axis", e.to_string()))?;
            }
        }
        if self.chaos.q_max == 0 {
            return Err(config_error("chaos.q_max", "must be at least 1"));
        }
        if let Some(r) = self.chaos.radius {
            if !(r > 0.0) {
                return Err(config_error("chaos.radius", "must be positive"));
            }
        }
        for (k, pair) in self.verify.covariance_pairs.iter().enumerate() {
            // Windows `s·y^{1/n}` must stay inside the simulated grid.
            if pair.iter().any(|&y| !(0.0..=1.0).contains(&y)) {
                return Err(config_error(
                    &format!("verify.covariance_pairs[{k}]"),
                    "y values must lie in [0, 1]",
                ));
            }
            if pair.iter().any(|&y| !on_dyadic_grid(y, self.verify.dyadic_levels)) {
                return Err(config_error(
                    &format!("verify.covariance_pairs[{k}]"),
                    "y values must lie on the dyadic grid",
                ));
            }
        }
        for (k, lag) in self.verify.lags.iter().enumerate() {
            if lag.len() != n {
                return Err(config_error(
                    &format!("verify.lags[{k}]"),
                    format!("expected {n} components"),
                ));
            }
        }
        if self.verify.dyadic_levels == 0 || self.verify.dyadic_levels > 10 {
            return Err(config_error("verify.dyadic_levels", "must be in 1..=10"));
        }
        Ok(())
    }

    /// Grid for the configured window, resolving the default resolution.
    pub fn grid_spec(&self, spec: &SpectralModel) -> Result<GridSpec> {
        let g = self
            .grid
            .as_ref()
            .ok_or_else(|| config_error("grid", "this command needs a [grid] table"))?;
        match g.points_per_axis {
            Some(p) => GridSpec::new(spec.n, g.s, p),
            None => GridSpec::covering(spec.n, g.s, spec.t_max),
        }
    }

    pub fn lags(&self) -> Vec<Vec<isize>> {
        if !self.verify.lags.is_empty() {
            return self.verify.lags.clone();
        }
        let n = self.model.n();
        [0isize, 1, 2, 5, 10]
            .iter()
            .map(|&l| {
                let mut v = vec![0; n];
                v[0] = l;
                v
            })
            .collect()
    }
}

fn on_dyadic_grid(y: f64, levels: u32) -> bool {
    let scaled = y * (1u64 << levels) as f64;
    (scaled - scaled.round()).abs() < 1e-9
}

/// `a.b.c=VALUE`: VALUE is read as a TOML value, falling back to a string.
fn apply_override(table: &mut toml::Table, item: &str) -> Result<()> {
    let (key, raw) = item
        .split_once('=')
        .ok_or_else(|| config_error(item, "override must look like KEY=VALUE"))?;
    let key = key.trim();
    let value = toml::from_str::<toml::Table>(&format!("v = {}", raw.trim()))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.trim().to_string()));
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(config_error(key, "empty key segment"));
    }
    let mut cur = table;
    for part in &parts[..parts.len() - 1] {
        let entry = cur
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| config_error(key, format!("`{part}` is not a table")))?;
    }
    cur.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}
