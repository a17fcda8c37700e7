//! Report schemas and the on-disk output formats.
//!
//! Every run writes a schema-versioned `report.json` into the output
//! directory. Convergence runs additionally write `errors.csv` (header
//! `eps,path_seed,t,l1_error`, one row per sample time of every cell) and a
//! gnuplot-ready `slope.dat`. Reports are byte-deterministic for a fixed
//! configuration and seed, independent of the worker count: cells are
//! computed independently and aggregated in a fixed order.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::Serialize;

use crate::diagnostics::{AccretivityBattery, AveragingEstimate};
use crate::error::Result;
use crate::hilbert::CorrectorBounds;
use crate::model::{DegeneracyScan, HypothesisReport};
use crate::solvers::RunMonitor;
use crate::stats::LineFit;

use super::config::ExperimentConfig;

pub const SCHEMA_VERSION: u32 = 1;

/// Scheme/configuration stamp attached to every report so each number is
/// traceable to the producing setup.
#[derive(Debug, Clone, Serialize)]
pub struct SchemeStamp {
    pub code_version: String,
    pub dim: usize,
    pub nx: usize,
    pub nv: usize,
    pub dt: f64,
    pub t_final: f64,
    pub eps_ladder: Vec<f64>,
    pub num_paths: usize,
    pub seed_base: u64,
    pub sample_count: usize,
    pub velocity: String,
    pub sigma: String,
    pub sigma_params: Vec<f64>,
    pub rho_in: String,
    pub rho_in_params: Vec<f64>,
    pub noise_modes: usize,
    pub noise_amplitudes: Vec<f64>,
}

impl SchemeStamp {
    pub fn from_config(cfg: &ExperimentConfig) -> Self {
        Self {
            code_version: env!("CARGO_PKG_VERSION").to_string(),
            dim: cfg.dim,
            nx: cfg.nx,
            nv: cfg.nv,
            dt: cfg.dt,
            t_final: cfg.t_final,
            eps_ladder: cfg.eps_ladder.clone(),
            num_paths: cfg.num_paths,
            seed_base: cfg.seed_base,
            sample_count: cfg.sample_count,
            velocity: cfg.velocity.clone(),
            sigma: cfg.sigma.clone(),
            sigma_params: cfg.sigma_params.clone(),
            rho_in: cfg.rho_in.clone(),
            rho_in_params: cfg.rho_in_params.clone(),
            noise_modes: cfg.noise_modes,
            noise_amplitudes: cfg.noise_amplitudes.clone(),
        }
    }
}

/// Monte Carlo summary of one ladder entry.
#[derive(Debug, Clone, Serialize)]
pub struct EpsSummary {
    pub eps: f64,
    /// sup over sample times of the across-path mean error (the quantity the
    /// convergence statement bounds).
    pub sup_t_mean_error: f64,
    /// Mean over paths of each path's sup error, with its standard error.
    pub mean_sup_error: f64,
    pub sup_error_stderr: f64,
    pub per_path_sup: Vec<f64>,
    /// Largest `‖f‖²_{L²}` seen over all steps and paths (uniform-bound
    /// monitor).
    pub sup_l2_sq_max: f64,
    pub positivity_violations: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct CellFailure {
    pub eps: f64,
    pub path_seed: u64,
    pub message: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceReport {
    pub schema_version: u32,
    pub mode: String,
    pub stamp: SchemeStamp,
    pub per_eps: Vec<EpsSummary>,
    /// Log-log fit of `sup_t mean error` against eps.
    pub fit: Option<LineFit>,
    /// Log-log fit of the per-path-sup means, for reference.
    pub fit_mean_sup: Option<LineFit>,
    /// True when no meaningful slope could be fitted (fewer than two ladder
    /// points, or errors at rounding level).
    pub degenerate_fit: bool,
    /// All errors at or below 1e-10: the configuration couples the two
    /// solvers pathwise exactly.
    pub exact_coupling: bool,
    pub failures: Vec<CellFailure>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ValidationReport {
    pub schema_version: u32,
    pub mode: String,
    pub stamp: SchemeStamp,
    pub hypotheses: HypothesisReport,
    pub degeneracy: DegeneracyScan,
    pub kappa0_inf: f64,
    pub kappa1_inf: f64,
    pub w4_norm_sq_sum: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct DissipativitySweep {
    pub fields: usize,
    pub max_rel_gap: f64,
    pub positive_lhs: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct F3Scaling {
    pub eps: Vec<f64>,
    /// Per ladder entry: sup over sample times of the across-path mean L²
    /// norm of the third corrector.
    pub sup_mean_l2: Vec<f64>,
    pub fit: Option<LineFit>,
    pub num_paths: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct AveragingStudy {
    pub eps: f64,
    pub num_paths: usize,
    pub alpha: f64,
    pub resolutions: Vec<usize>,
    pub estimates: Vec<AveragingEstimate>,
    pub max_over_min: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ProbeReport {
    pub schema_version: u32,
    pub mode: String,
    pub stamp: SchemeStamp,
    pub accretivity: Vec<AccretivityBattery>,
    pub dissipativity: DissipativitySweep,
    pub f3_scaling: F3Scaling,
    pub averaging: AveragingStudy,
    pub failures: Vec<String>,
    pub passed: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct SimulateReport {
    pub schema_version: u32,
    pub mode: String,
    pub stamp: SchemeStamp,
    pub eps: f64,
    pub path_seed: u64,
    pub times: Vec<f64>,
    pub errors: Vec<f64>,
    pub sup_error: f64,
    pub monitor: RunMonitor,
    pub fluid_monitor: RunMonitor,
    /// Smoothness proxy of the fluid iterates, sup of `‖ρ‖²_{H²}` over the
    /// samples.
    pub fluid_sup_h2_sq: f64,
    pub corrector_bounds: Option<CorrectorBounds>,
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

/// `errors.csv`: one row per (cell, sample time).
pub fn write_errors_csv(path: &Path, rows: &[(f64, u64, f64, f64)]) -> Result<()> {
    let mut out = String::from("eps,path_seed,t,l1_error\n");
    for (eps, seed, t, err) in rows {
        out.push_str(&format!("{eps},{seed},{t},{err:e}\n"));
    }
    fs::write(path, out)?;
    Ok(())
}

/// `slope.dat`: whitespace-separated `eps  error  fit`, commented header;
/// plot with `set logscale xy`.
pub fn write_slope_dat(path: &Path, per_eps: &[EpsSummary], fit: Option<&LineFit>) -> Result<()> {
    let mut f = fs::File::create(path)?;
    writeln!(f, "# eps  sup_t_mean_error  fitted")?;
    match fit {
        Some(fit) => writeln!(
            f,
            "# slope {:.6} +- {:.6}, intercept {:.6}",
            fit.slope, fit.slope_stderr, fit.intercept
        )?,
        None => writeln!(f, "# no fit (degenerate)")?,
    }
    for s in per_eps {
        let fitted = fit
            .map(|fi| (fi.intercept + fi.slope * s.eps.ln()).exp())
            .unwrap_or(f64::NAN);
        writeln!(f, "{:e} {:e} {:e}", s.eps, s.sup_t_mean_error, fitted)?;
    }
    Ok(())
}
