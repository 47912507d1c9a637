//! `bmctl`: batch driver running experiments from a config file.
//!
//! Exit codes: 0 on success or passed verification, 2 on failed
//! verification, 1 on any error (including usage errors).

use std::ffi::OsString;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Parser, Subcommand};
use rayon::prelude::*;
use serde::Serialize;

use crate::chaos::{chaos_coefficients, hermite_rank, ChaosExpansion, RANK_TOLERANCE};
use crate::config::ExperimentConfig;
use crate::covariance::{whiten, CovarianceModel};
use crate::error::{Error, Result};
use crate::functional::Functional;
use crate::harness::{
    clt_test, clt_test_values, compute_l_s, compute_z_path, covariance_table, dyadic_grid,
    dyadic_pairs, increment_test, write_observations_csv, write_paths_csv, BMObservation, BMPath,
    VerificationReport,
};
use crate::rng::replicate_seed;
use crate::second_chaos::{c_matrix, v2_spectral, v2_trace, SecondChaosReport, CONVENTION};
use crate::simulate::{empirical_covariance, simulate, FieldSample, GridSpec, LagEstimate};
use crate::spectral::SpectralModel;
use crate::variance::v_limit;

pub const EXIT_PASS: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_FAIL: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "bmctl", version, about = "Breuer–Major experiments on stationary Gaussian fields")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Experiment config (TOML).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides `seeds.base`.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Overrides `seeds.replicates`.
    #[arg(long, global = true)]
    pub replicates: Option<usize>,
    /// Overrides `out.dir`.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads (results do not depend on this).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// `KEY=VALUE` with a dotted config key; repeatable.
    #[arg(long = "override", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Clone, Copy, Subcommand)]
pub enum Command {
    /// Hermite chaos coefficients of the (whitened) functional.
    Expand,
    /// Hermite rank of the functional.
    Rank,
    /// Asymptotic variance V and finite-window V_s.
    Variance,
    /// Second-chaos variance by the trace and spectral routes.
    SecondChaos,
    /// Draw field samples and persist them under fields/.
    Simulate,
    /// Empirical covariance of simulated fields against the model.
    Covcheck,
    /// CLT check of L_s against N(0, V).
    VerifyClt,
    /// Finite-dimensional and increment checks of y ↦ Z_{s,y}.
    VerifyFclt,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Expand => "expand",
            Command::Rank => "rank",
            Command::Variance => "variance",
            Command::SecondChaos => "second-chaos",
            Command::Simulate => "simulate",
            Command::Covcheck => "covcheck",
            Command::VerifyClt => "verify-clt",
            Command::VerifyFclt => "verify-fclt",
        }
    }
}

/// Parses `args` (including the program name) and runs; returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_ERROR } else { EXIT_PASS };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(outcome) => {
            println!("{}", outcome.summary);
            if outcome.pass {
                EXIT_PASS
            } else {
                EXIT_FAIL
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_ERROR
        }
    }
}

pub struct Outcome {
    pub pass: bool,
    pub summary: String,
}

pub fn execute(cli: &Cli) -> Result<Outcome> {
    let path = cli.config.as_ref().ok_or_else(|| Error::Config {
        path: "--config".into(),
        message: "a config file is required".into(),
    })?;
    let mut cfg = ExperimentConfig::load(path, &cli.overrides)?;
    if let Some(seed) = cli.seed {
        cfg.seeds.base = seed;
    }
    if let Some(r) = cli.replicates {
        cfg.seeds.replicates = r;
    }
    if let Some(out) = &cli.out {
        cfg.out.dir = out.clone();
    }
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(t) = cli.threads {
        builder = builder.num_threads(t.max(1));
    }
    let pool = builder
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    let cmd = cli.command;
    pool.install(|| Experiment::new(cfg)?.run(cmd))
}

/// Config plus the whitened model and functional shared by every command.
struct Experiment {
    cfg: ExperimentConfig,
    model: CovarianceModel,
    g: Functional,
}

#[derive(Serialize)]
struct Report<'a, T: Serialize> {
    command: &'a str,
    generated_unix: u64,
    pass: bool,
    config: &'a ExperimentConfig,
    result: T,
}

impl Experiment {
    fn new(cfg: ExperimentConfig) -> Result<Self> {
        let raw_model = cfg.model.build()?;
        let raw_g = cfg.functional.build(raw_model.m)?;
        let (model, g) = whiten(&raw_model, &raw_g)?;
        Ok(Experiment { cfg, model, g })
    }

    fn out_dir(&self) -> Result<&Path> {
        std::fs::create_dir_all(&self.cfg.out.dir)?;
        Ok(&self.cfg.out.dir)
    }

    fn radius(&self) -> f64 {
        self.cfg.chaos.radius.unwrap_or(self.model.decay_radius)
    }

    fn expansion(&self) -> Result<ChaosExpansion> {
        chaos_coefficients(&self.g, self.cfg.chaos.q_max, self.cfg.chaos.quadrature_order)
    }

    fn write_report<T: Serialize>(&self, command: Command, pass: bool, result: T) -> Result<()> {
        let generated_unix = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        let report = Report {
            command: command.name(),
            generated_unix,
            pass,
            config: &self.cfg,
            result,
        };
        let text = serde_json::to_string_pretty(&report)?;
        std::fs::write(self.out_dir()?.join("report.json"), text + "\n")?;
        Ok(())
    }

    fn spectral(&self) -> Result<SpectralModel> {
        self.model.to_spectral()
    }

    /// Simulates every replicate in parallel and maps it through `f`; results
    /// come back in replicate order.
    fn replicates<T, F>(&self, spec: &SpectralModel, grid: &GridSpec, f: F) -> Result<Vec<T>>
    where
        T: Send,
        F: Fn(usize, FieldSample) -> Result<T> + Sync,
    {
        let base = self.cfg.seeds.base;
        let write = self.cfg.out.write_fields;
        let fields = self.cfg.out.dir.join("fields");
        (0..self.cfg.seeds.replicates)
            .into_par_iter()
            .map(|i| {
                let sample = simulate(spec, grid, replicate_seed(base, i as u64))?;
                if write {
                    sample.save(&fields, &format!("field_{i:05}"))?;
                }
                f(i, sample)
            })
            .collect()
    }

    fn run(&self, cmd: Command) -> Result<Outcome> {
        match cmd {
            Command::Expand => self.expand(),
            Command::Rank => self.rank(),
            Command::Variance => self.variance(),
            Command::SecondChaos => self.second_chaos(),
            Command::Simulate => self.simulate(),
            Command::Covcheck => self.covcheck(),
            Command::VerifyClt => self.verify_clt(),
            Command::VerifyFclt => self.verify_fclt(),
        }
    }

    fn expand(&self) -> Result<Outcome> {
        let e = self.expansion()?;
        let text = e.to_json()?;
        std::fs::write(self.out_dir()?.join("expansion.json"), &text)?;
        let value: serde_json::Value = serde_json::from_str(&text)?;
        self.write_report(Command::Expand, true, value)?;
        let terms: usize = e.levels.values().map(Vec::len).sum();
        Ok(Outcome {
            pass: true,
            summary: format!(
                "expand: {} terms on levels {:?}, captured mass {:.6e}, residual {:.3e}",
                terms,
                e.levels.keys().collect::<Vec<_>>(),
                e.captured_mass,
                e.residual_mass()
            ),
        })
    }

    fn rank(&self) -> Result<Outcome> {
        let e = self.expansion()?;
        let d = hermite_rank(&e, RANK_TOLERANCE)?;
        #[derive(Serialize)]
        struct R {
            rank: usize,
            tolerance: f64,
        }
        self.write_report(
            Command::Rank,
            true,
            R {
                rank: d,
                tolerance: RANK_TOLERANCE,
            },
        )?;
        Ok(Outcome {
            pass: true,
            summary: d.to_string(),
        })
    }

    fn variance(&self) -> Result<Outcome> {
        let e = self.expansion()?;
        let mut report = v_limit(&e, &self.model, self.radius())?;
        report.add_finite_windows(&e, &self.model, &self.cfg.chaos.finite_windows)?;
        let csv = BufWriter::new(File::create(self.out_dir()?.join("convergence.csv"))?);
        report.write_convergence_csv(csv)?;
        let summary = format!("variance: V = {:.10} (rank {})", report.v, report.rank);
        self.write_report(Command::Variance, true, &report)?;
        Ok(Outcome {
            pass: true,
            summary,
        })
    }

    fn second_chaos(&self) -> Result<Outcome> {
        let c = c_matrix(&self.g, self.cfg.chaos.quadrature_order)?;
        let radius = self.radius();
        let trace = v2_trace(&self.model, &c, radius)?;
        let spectral = match self.spectral() {
            Ok(spec) if spec.is_single_noise() => Some(v2_spectral(&spec, &c)?),
            _ => None,
        };
        let e = self.expansion()?;
        let chaos = if e.level(2).is_some() {
            let proj = e.project(2);
            v_limit(&proj, &self.model, radius)?.level(2)
        } else {
            Some(0.0)
        };
        let report = SecondChaosReport {
            v2_trace: trace,
            v2_spectral: spectral,
            v2_chaos: chaos,
            c_matrix: c.rows(),
            convention: CONVENTION,
        };
        self.write_report(Command::SecondChaos, true, &report)?;
        Ok(Outcome {
            pass: true,
            summary: format!(
                "second-chaos: V2 trace = {trace:.10}, spectral = {}, chaos = {}",
                fmt_opt(spectral),
                fmt_opt(chaos)
            ),
        })
    }

    fn simulate(&self) -> Result<Outcome> {
        let spec = self.spectral()?;
        let grid = self.cfg.grid_spec(&spec)?;
        let fields = self.out_dir()?.join("fields");
        let base = self.cfg.seeds.base;
        #[derive(Serialize)]
        struct Row {
            replicate: usize,
            seed: u64,
            file: String,
            max_imag_residue: f64,
        }
        let rows: Vec<Row> = (0..self.cfg.seeds.replicates)
            .into_par_iter()
            .map(|i| {
                let seed = replicate_seed(base, i as u64);
                let sample = simulate(&spec, &grid, seed)?;
                let stem = format!("field_{i:05}");
                sample.save(&fields, &stem)?;
                Ok(Row {
                    replicate: i,
                    seed,
                    file: format!("fields/{stem}.bin"),
                    max_imag_residue: sample.max_imag_residue,
                })
            })
            .collect::<Result<_>>()?;
        #[derive(Serialize)]
        struct R {
            grid: GridSpec,
            spacing: f64,
            t_max: f64,
            samples: Vec<Row>,
        }
        let count = rows.len();
        self.write_report(
            Command::Simulate,
            true,
            R {
                grid,
                spacing: grid.spacing(),
                t_max: spec.t_max,
                samples: rows,
            },
        )?;
        Ok(Outcome {
            pass: true,
            summary: format!(
                "simulate: {count} fields on {}^{} sites written to {}",
                grid.points_per_axis,
                grid.n,
                fields.display()
            ),
        })
    }

    fn covcheck(&self) -> Result<Outcome> {
        let spec = self.spectral()?;
        let grid = self.cfg.grid_spec(&spec)?;
        let samples = self.replicates(&spec, &grid, |_, s| Ok(s))?;
        let estimates = empirical_covariance(&samples, &self.cfg.lags())?;
        let sigmas = self.cfg.verify.thresholds.covariance_sigmas;
        #[derive(Serialize)]
        struct Entry {
            #[serde(flatten)]
            estimate: LagEstimate,
            target: Vec<Vec<f64>>,
            max_z_score: f64,
            pass: bool,
        }
        let mut entries = Vec::new();
        for est in estimates {
            let r = self.model.eval_r(&est.lag_physical)?;
            let m = self.model.m;
            let mut worst: f64 = 0.0;
            for j in 0..m {
                for k in 0..m {
                    let z = (est.estimate[j][k] - r[(j, k)]).abs() / est.stderr[j][k];
                    worst = worst.max(z);
                }
            }
            entries.push(Entry {
                target: (0..m).map(|j| (0..m).map(|k| r[(j, k)]).collect()).collect(),
                max_z_score: worst,
                pass: worst <= sigmas,
                estimate: est,
            });
        }
        let pass = entries.iter().all(|e| e.pass);
        let worst = entries.iter().map(|e| e.max_z_score).fold(0.0, f64::max);
        #[derive(Serialize)]
        struct R {
            samples: usize,
            covariance_sigmas: f64,
            max_imag_residue: f64,
            lags: Vec<Entry>,
        }
        let imag = samples.iter().map(|s| s.max_imag_residue).fold(0.0, f64::max);
        self.write_report(
            Command::Covcheck,
            pass,
            R {
                samples: samples.len(),
                covariance_sigmas: sigmas,
                max_imag_residue: imag,
                lags: entries,
            },
        )?;
        Ok(Outcome {
            pass,
            summary: format!(
                "covcheck: {} (max |z| = {worst:.3} vs {sigmas})",
                verdict(pass)
            ),
        })
    }

    fn check_replicates(&self, need: usize) -> Result<()> {
        if self.cfg.seeds.replicates < need {
            return Err(Error::InsufficientReplicates {
                need,
                got: self.cfg.seeds.replicates,
            });
        }
        Ok(())
    }

    fn verify_clt(&self) -> Result<Outcome> {
        self.check_replicates(crate::harness::MIN_CLT_REPLICATES)?;
        let e = self.expansion()?;
        let variance = v_limit(&e, &self.model, self.radius())?;
        let spec = self.spectral()?;
        let grid = self.cfg.grid_spec(&spec)?;
        let g0 = e.mean();
        let obs: Vec<BMObservation> =
            self.replicates(&spec, &grid, |_, s| compute_l_s(&s, &self.g, g0, grid.s))?;
        let report = clt_test(&obs, variance.v, self.cfg.verify.thresholds)?;
        let csv = BufWriter::new(File::create(self.out_dir()?.join("observations.csv"))?);
        write_observations_csv(&obs, csv)?;
        #[derive(Serialize)]
        struct R<'a> {
            #[serde(rename = "V")]
            v: f64,
            s: f64,
            grid: GridSpec,
            centering: f64,
            verification: &'a VerificationReport,
        }
        self.write_report(
            Command::VerifyClt,
            report.pass,
            R {
                v: variance.v,
                s: grid.s,
                grid,
                centering: g0,
                verification: &report,
            },
        )?;
        let var = report.variance.as_ref().unwrap();
        let ks = report.ks.as_ref().unwrap();
        Ok(Outcome {
            pass: report.pass,
            summary: format!(
                "verify-clt: {} (var {:.5} vs V {:.5}, band [{:.5}, {:.5}]; KS {:.4} vs {:.4})",
                verdict(report.pass),
                var.empirical,
                var.target,
                var.band[0],
                var.band[1],
                ks.ks.statistic,
                ks.critical
            ),
        })
    }

    fn verify_fclt(&self) -> Result<Outcome> {
        self.check_replicates(crate::harness::MIN_CLT_REPLICATES)?;
        let e = self.expansion()?;
        let variance = v_limit(&e, &self.model, self.radius())?;
        let v = variance.v;
        let spec = self.spectral()?;
        let grid = self.cfg.grid_spec(&spec)?;
        let g0 = e.mean();
        let levels = self.cfg.verify.dyadic_levels;
        let ys = dyadic_grid(levels);
        let thresholds = self.cfg.verify.thresholds;
        let paths: Vec<BMPath> = self.replicates(&spec, &grid, |_, s| {
            compute_z_path(&s, &self.g, g0, grid.s, &ys)
        })?;

        #[derive(Serialize)]
        struct Marginal {
            y: f64,
            verification: VerificationReport,
        }
        let mut marginals = Vec::new();
        for (k, &y) in ys.iter().enumerate().skip(1) {
            let col: Vec<f64> = paths.iter().map(|p| p.z[k]).collect();
            marginals.push(Marginal {
                y,
                verification: clt_test_values(&col, v * y, thresholds)?,
            });
        }
        let pairs: Vec<(f64, f64)> = self
            .cfg
            .verify
            .covariance_pairs
            .iter()
            .map(|p| (p[0], p[1]))
            .collect();
        let table = covariance_table(&paths, v, &pairs, thresholds)?;
        let increments = increment_test(
            &paths,
            self.cfg.verify.p,
            &dyadic_pairs(levels),
            self.g.integrability(),
            thresholds,
        )?;
        let pass = marginals.iter().all(|m| m.verification.pass)
            && table.iter().all(|c| c.pass)
            && increments.pass;

        let dir = self.out_dir()?;
        write_paths_csv(&paths, BufWriter::new(File::create(dir.join("paths.csv"))?))?;
        let obs: Vec<BMObservation> = paths
            .iter()
            .map(|p| BMObservation {
                seed: p.seed,
                s: p.s,
                l_s: *p.z.last().unwrap(),
                per_level: None,
            })
            .collect();
        write_observations_csv(&obs, BufWriter::new(File::create(dir.join("observations.csv"))?))?;

        #[derive(Serialize)]
        struct R<'a> {
            #[serde(rename = "V")]
            v: f64,
            s: f64,
            grid: GridSpec,
            y_grid: &'a [f64],
            note: &'static str,
            marginals: Vec<Marginal>,
            covariance_table: &'a [crate::harness::CovarianceCell],
            increments: &'a VerificationReport,
        }
        let spread = increments.increments.as_ref().map_or(f64::NAN, |i| i.spread);
        let worst_cov = table.iter().map(|c| c.z_score.abs()).fold(0.0, f64::max);
        self.write_report(
            Command::VerifyFclt,
            pass,
            R {
                v,
                s: grid.s,
                grid,
                y_grid: &ys,
                note: "functional convergence is checked on a finite y grid in [0, 1] only",
                marginals,
                covariance_table: &table,
                increments: &increments,
            },
        )?;
        Ok(Outcome {
            pass,
            summary: format!(
                "verify-fclt: {} (max covariance |z| {worst_cov:.3}, increment spread {spread:.3})",
                verdict(pass)
            ),
        })
    }
}

fn verdict(pass: bool) -> &'static str {
    if pass {
        "PASS"
    } else {
        "FAIL"
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.10}"))
}
