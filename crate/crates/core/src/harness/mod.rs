//! Experiment orchestration: the four run modes behind the CLI.
//!
//! * `validate` — hypothesis validators, the non-degeneracy scan of the
//!   velocity field, and the noise regularity constants;
//! * `converge` — the (eps ladder × Monte Carlo paths) study of the strong
//!   L¹ distance between the kinetic solution and the diffusion limit, with
//!   the fitted log-log rate;
//! * `probe` — accretivity battery, dissipativity sweep, third-corrector
//!   scaling study, and the velocity-averaging resolution study;
//! * `simulate` — a single coupled run with optional trajectory snapshots
//!   and a replayable noise path.
//!
//! Cells of a study are mutually independent: each builds its own solvers
//! and consumes its own seeded Wiener path (`seed_base + path_index`), so
//! results are identical for any worker count and reports are
//! byte-reproducible.

pub mod config;
pub mod report;

pub use config::{ExperimentConfig, SnapshotFormat};
pub use report::*;

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::diagnostics::{accretivity_battery, averaging_estimate};
use crate::error::{Error, Result};
use crate::fields::{PhaseField, ScalarField};
use crate::hilbert::{corrector_bounds, corrector_f3};
use crate::model::{degeneracy_scan, dissipativity_pair, validate_hypotheses, Model};
use crate::noise::WienerPath;
use crate::solvers::{
    coupled_run, sample_steps, CoupledOptions, FluidSolver, KineticSolver, RunMonitor, Trajectory,
};
use crate::stats;

/// Ladder used by the non-degeneracy scan in `validate` mode.
const DEGENERACY_LADDER: [f64; 4] = [1e-1, 1e-2, 1e-3, 1e-4];

fn ensure_out_dir(cfg: &ExperimentConfig) -> Result<PathBuf> {
    let dir = PathBuf::from(&cfg.out_dir);
    fs::create_dir_all(&dir)?;
    Ok(dir)
}

/// Reject configurations whose model fails the standing hypotheses.
fn hypothesis_gate(cfg: &ExperimentConfig, model: &Model) -> Result<()> {
    let report = validate_hypotheses(
        &model.velocity,
        &model.opacity,
        cfg.validation_range,
        cfg.validation_points,
    );
    if report.passed() {
        Ok(())
    } else {
        let mut reasons = Vec::new();
        for (name, check) in [
            ("null_flux", &report.null_flux),
            ("k_positive", &report.k_positive),
            ("bounds", &report.bounds),
            ("lipschitz", &report.lipschitz),
            ("monotonicity", &report.monotonicity),
        ] {
            if !check.pass {
                reasons.push(format!("{name}: {}", check.detail));
            }
        }
        Err(Error::Validation(reasons.join("; ")))
    }
}

fn degeneracy_fine(dim: usize) -> usize {
    match dim {
        1 => 1 << 20,
        _ => 1 << 10,
    }
}

/// `validate` mode: hypothesis report, non-degeneracy scan, noise constants.
pub fn run_validate(cfg: &ExperimentConfig) -> Result<ValidationReport> {
    cfg.validate()?;
    let grid = cfg.grid()?;
    let model = cfg.build_model(grid)?;
    let basis = cfg.build_basis(grid)?;
    let hypotheses = validate_hypotheses(
        &model.velocity,
        &model.opacity,
        cfg.validation_range,
        cfg.validation_points,
    );
    let degeneracy = degeneracy_scan(
        &model.velocity,
        &DEGENERACY_LADDER,
        41,
        degeneracy_fine(grid.dim()),
    )?;
    let passed = hypotheses.passed() && !degeneracy.degenerate;
    let report = ValidationReport {
        schema_version: SCHEMA_VERSION,
        mode: "validate".into(),
        stamp: SchemeStamp::from_config(cfg),
        hypotheses,
        degeneracy,
        kappa0_inf: basis.kappa0_inf(),
        kappa1_inf: basis.kappa1_inf(),
        w4_norm_sq_sum: basis.w4_norm_sq_sum(),
        passed,
    };
    let dir = ensure_out_dir(cfg)?;
    write_json(&dir.join("report.json"), &report)?;
    Ok(report)
}

struct CellOut {
    times: Vec<f64>,
    errors: Vec<f64>,
    monitor: RunMonitor,
}

/// `converge` mode: the Monte Carlo convergence study.
pub fn run_convergence(cfg: &ExperimentConfig) -> Result<ConvergenceReport> {
    cfg.validate()?;
    let grid = cfg.grid()?;
    let model = cfg.build_model(grid)?;
    hypothesis_gate(cfg, &model)?;
    let basis = cfg.build_basis(grid)?;
    let rho_in = cfg.build_rho_in(grid)?;
    let steps = cfg.scheme(cfg.eps_ladder[0]).num_steps();
    let record = sample_steps(steps, cfg.sample_count);

    let cells: Vec<(usize, usize)> = (0..cfg.eps_ladder.len())
        .flat_map(|ei| (0..cfg.num_paths).map(move |pi| (ei, pi)))
        .collect();
    let results: Vec<std::result::Result<CellOut, String>> = cells
        .par_iter()
        .map(|&(ei, pi)| {
            let eps = cfg.eps_ladder[ei];
            let seed = cfg.path_seed(pi);
            let path = WienerPath::sample(basis.num_modes(), cfg.dt, steps, seed)
                .map_err(|e| e.to_string())?;
            let run = coupled_run(
                grid,
                cfg.scheme(eps),
                &model,
                &basis,
                &path,
                &rho_in,
                &record,
                CoupledOptions::default(),
            )
            .map_err(|e| e.to_string())?;
            Ok(CellOut {
                times: run.times,
                errors: run.errors,
                monitor: run.monitor,
            })
        })
        .collect();

    let mut per_eps = Vec::with_capacity(cfg.eps_ladder.len());
    let mut failures = Vec::new();
    let mut csv_rows: Vec<(f64, u64, f64, f64)> = Vec::new();
    for (ei, &eps) in cfg.eps_ladder.iter().enumerate() {
        let mut per_path_sup = Vec::new();
        let mut time_sums: Vec<f64> = Vec::new();
        let mut n_ok = 0usize;
        let mut sup_l2_sq_max = 0.0f64;
        let mut positivity_violations = 0usize;
        for pi in 0..cfg.num_paths {
            let seed = cfg.path_seed(pi);
            match &results[ei * cfg.num_paths + pi] {
                Ok(cell) => {
                    if time_sums.is_empty() {
                        time_sums = vec![0.0; cell.errors.len()];
                    }
                    for (acc, &e) in time_sums.iter_mut().zip(cell.errors.iter()) {
                        *acc += e;
                    }
                    per_path_sup.push(cell.errors.iter().fold(0.0f64, |a, &b| a.max(b)));
                    for (&t, &e) in cell.times.iter().zip(cell.errors.iter()) {
                        csv_rows.push((eps, seed, t, e));
                    }
                    sup_l2_sq_max = sup_l2_sq_max.max(cell.monitor.sup_l2_sq);
                    positivity_violations += cell.monitor.positivity_violations;
                    n_ok += 1;
                }
                Err(msg) => failures.push(CellFailure {
                    eps,
                    path_seed: seed,
                    message: msg.clone(),
                }),
            }
        }
        let sup_t_mean_error = if n_ok > 0 {
            time_sums
                .iter()
                .map(|s| s / n_ok as f64)
                .fold(0.0f64, f64::max)
        } else {
            f64::NAN
        };
        let (mean_sup_error, sup_error_stderr) = stats::mean_and_stderr(&per_path_sup);
        per_eps.push(EpsSummary {
            eps,
            sup_t_mean_error,
            mean_sup_error,
            sup_error_stderr,
            per_path_sup,
            sup_l2_sq_max,
            positivity_violations,
        });
    }

    let sup_means: Vec<f64> = per_eps.iter().map(|s| s.sup_t_mean_error).collect();
    let exact_coupling = sup_means.iter().all(|&e| e.is_finite() && e <= 1e-10);
    let (fit, fit_mean_sup) = if exact_coupling {
        (None, None)
    } else {
        (
            stats::fit_log_log(&cfg.eps_ladder, &sup_means),
            stats::fit_log_log(
                &cfg.eps_ladder,
                &per_eps.iter().map(|s| s.mean_sup_error).collect::<Vec<_>>(),
            ),
        )
    };
    let degenerate_fit = fit.is_none();

    let report = ConvergenceReport {
        schema_version: SCHEMA_VERSION,
        mode: "converge".into(),
        stamp: SchemeStamp::from_config(cfg),
        per_eps,
        fit,
        fit_mean_sup,
        degenerate_fit,
        exact_coupling,
        failures,
    };
    let dir = ensure_out_dir(cfg)?;
    write_json(&dir.join("report.json"), &report)?;
    write_errors_csv(&dir.join("errors.csv"), &csv_rows)?;
    write_slope_dat(&dir.join("slope.dat"), &report.per_eps, report.fit.as_ref())?;
    Ok(report)
}

/// Third-corrector scaling study over the leading ladder entries.
pub fn f3_scaling_study(cfg: &ExperimentConfig) -> Result<F3Scaling> {
    let grid = cfg.grid()?;
    let model = cfg.build_model(grid)?;
    let basis = cfg.build_basis(grid)?;
    let rho_in = cfg.build_rho_in(grid)?;
    let eps_list: Vec<f64> = cfg.eps_ladder.iter().copied().take(3).collect();
    let num_paths = cfg.num_paths.min(32);
    let steps = cfg.scheme(eps_list[0]).num_steps();
    let every_step: Vec<usize> = (1..=steps).collect();
    let record = sample_steps(steps, cfg.sample_count);

    let cells: Vec<(usize, usize)> = (0..eps_list.len())
        .flat_map(|ei| (0..num_paths).map(move |pi| (ei, pi)))
        .collect();
    let results: Vec<Result<Vec<f64>>> = cells
        .par_iter()
        .map(|&(ei, pi)| {
            let eps = eps_list[ei];
            let path = WienerPath::sample(basis.num_modes(), cfg.dt, steps, cfg.path_seed(pi))?;
            let mut fluid = FluidSolver::new(grid, cfg.scheme(eps), &model, &basis)?;
            let rho_path = fluid.solve(&rho_in, &path, &every_step)?;
            let f3 = corrector_f3(&rho_path, &model, &basis, &path, eps, &record)?;
            Ok(f3.states[1..].iter().map(|s| s.l2_norm()).collect())
        })
        .collect();

    let mut sup_mean_l2 = Vec::with_capacity(eps_list.len());
    for ei in 0..eps_list.len() {
        let mut sums: Vec<f64> = vec![0.0; record.len()];
        for pi in 0..num_paths {
            let norms = results[ei * num_paths + pi]
                .as_ref()
                .map_err(|e| Error::ProbeFailure(format!("f3 study cell failed: {e}")))?;
            for (acc, &n) in sums.iter_mut().zip(norms.iter()) {
                *acc += n;
            }
        }
        sup_mean_l2.push(
            sums.iter()
                .map(|s| s / num_paths as f64)
                .fold(0.0f64, f64::max),
        );
    }
    let trivial = sup_mean_l2.iter().all(|&v| v < 1e-14);
    let fit = if trivial {
        None
    } else {
        stats::fit_log_log(&eps_list, &sup_mean_l2)
    };
    Ok(F3Scaling {
        eps: eps_list,
        sup_mean_l2,
        fit,
        num_paths,
    })
}

/// Velocity-averaging regularity estimates across spatial resolutions
/// `{nx/2, nx, 2nx}` at eps = 1.
pub fn averaging_study(cfg: &ExperimentConfig) -> Result<AveragingStudy> {
    let eps = 1.0;
    let num_paths = cfg.num_paths.min(16);
    let resolutions = vec![cfg.nx / 2, cfg.nx, cfg.nx * 2];
    let steps = cfg.scheme(eps).num_steps();
    let record = sample_steps(steps, cfg.sample_count);
    let mut estimates = Vec::with_capacity(resolutions.len());
    for &nx in &resolutions {
        let grid = cfg.grid_with_nx(nx)?;
        let model = cfg.build_model(grid)?;
        let basis = cfg.build_basis(grid)?;
        let rho_in = cfg.build_rho_in(grid)?;
        let trajs: Vec<Result<Trajectory<ScalarField>>> = (0..num_paths)
            .into_par_iter()
            .map(|pi| {
                let path = WienerPath::sample(basis.num_modes(), cfg.dt, steps, cfg.path_seed(pi))?;
                let mut kin = KineticSolver::new(grid, cfg.scheme(eps), &model, &basis)?;
                let (traj, _) = kin.solve(&PhaseField::from_scalar(&rho_in), &path, &record)?;
                let mut avg = Trajectory::new();
                for (t, state) in traj.iter() {
                    avg.push(t, state.velocity_average());
                }
                Ok(avg)
            })
            .collect();
        let mut ensemble = Vec::with_capacity(num_paths);
        for t in trajs {
            ensemble.push(t.map_err(|e| Error::ProbeFailure(format!("averaging cell: {e}")))?);
        }
        estimates.push(averaging_estimate(&ensemble, cfg.alpha)?);
    }
    let means: Vec<f64> = estimates.iter().map(|e| e.mean).collect();
    let max = means.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let min = means.iter().fold(f64::INFINITY, |a, &b| a.min(b));
    Ok(AveragingStudy {
        eps,
        num_paths,
        alpha: cfg.alpha,
        resolutions,
        estimates,
        max_over_min: max / min,
    })
}

/// Dissipativity identity sweep over seeded random phase-space fields.
pub fn dissipativity_sweep(cfg: &ExperimentConfig, fields: usize) -> Result<DissipativitySweep> {
    use rand::{Rng, SeedableRng};
    let grid = cfg.grid()?;
    let model = cfg.build_model(grid)?;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(cfg.seed_base ^ 0xd155);
    let mut max_rel_gap = 0.0f64;
    let mut positive_lhs = 0usize;
    let n = grid.x_len() * grid.v_len();
    for _ in 0..fields {
        let values: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let f = PhaseField::from_values(grid, values)?;
        let (lhs, rhs) = dissipativity_pair(&f, &model.opacity);
        max_rel_gap = max_rel_gap.max((lhs - rhs).abs() / (1.0 + lhs.abs()));
        if lhs > 0.0 {
            positive_lhs += 1;
        }
    }
    Ok(DissipativitySweep {
        fields,
        max_rel_gap,
        positive_lhs,
    })
}

/// `probe` mode: all numerical lemma probes with their pinned thresholds.
pub fn run_probe(cfg: &ExperimentConfig) -> Result<ProbeReport> {
    cfg.validate()?;
    let grid = cfg.grid()?;
    let model = cfg.build_model(grid)?;
    hypothesis_gate(cfg, &model)?;

    let mut failures = Vec::new();

    let mut accretivity = Vec::new();
    for (i, &delta) in [1e-1, 1e-2, 1e-3].iter().enumerate() {
        let battery = accretivity_battery(
            &model.opacity,
            delta,
            10_000,
            grid.nv(),
            cfg.seed_base.wrapping_add(1000 + i as u64),
        )?;
        if battery.violations > 0 {
            failures.push(format!(
                "accretivity: {} violations at delta {delta}",
                battery.violations
            ));
        }
        accretivity.push(battery);
    }

    let dissipativity = dissipativity_sweep(cfg, 1000)?;
    if dissipativity.max_rel_gap > 1e-12 {
        failures.push(format!(
            "dissipativity: relative identity gap {} exceeds 1e-12",
            dissipativity.max_rel_gap
        ));
    }
    if dissipativity.positive_lhs > 0 {
        failures.push(format!(
            "dissipativity: {} fields with positive pairing",
            dissipativity.positive_lhs
        ));
    }

    let f3_scaling = f3_scaling_study(cfg)?;
    if let Some(fit) = &f3_scaling.fit {
        if !(-1.3..=-0.7).contains(&fit.slope) {
            failures.push(format!(
                "third-corrector scaling slope {} outside [-1.3, -0.7]",
                fit.slope
            ));
        }
    }

    let averaging = averaging_study(cfg)?;
    if averaging.max_over_min >= 2.0 {
        failures.push(format!(
            "averaging estimate varies by {} across resolutions",
            averaging.max_over_min
        ));
    }

    let report = ProbeReport {
        schema_version: SCHEMA_VERSION,
        mode: "probe".into(),
        stamp: SchemeStamp::from_config(cfg),
        accretivity,
        dissipativity,
        f3_scaling,
        averaging,
        passed: failures.is_empty(),
        failures,
    };
    let dir = ensure_out_dir(cfg)?;
    write_json(&dir.join("report.json"), &report)?;
    Ok(report)
}

/// `simulate` mode: one coupled run at the leading ladder entry.
pub fn run_simulate(cfg: &ExperimentConfig) -> Result<SimulateReport> {
    cfg.validate()?;
    let grid = cfg.grid()?;
    let model = cfg.build_model(grid)?;
    hypothesis_gate(cfg, &model)?;
    let basis = cfg.build_basis(grid)?;
    let rho_in = cfg.build_rho_in(grid)?;
    let eps = cfg.eps_ladder[0];
    let scheme = cfg.scheme(eps);
    let steps = scheme.num_steps();
    let record = sample_steps(steps, cfg.sample_count);
    let seed = cfg.seed_base;
    let path = WienerPath::sample(basis.num_modes(), cfg.dt, steps, seed)?;
    let run = coupled_run(
        grid,
        scheme,
        &model,
        &basis,
        &path,
        &rho_in,
        &record,
        CoupledOptions {
            store_kinetic: cfg.write_snapshots,
            store_rho_every_step: false,
        },
    )?;

    let dir = ensure_out_dir(cfg)?;
    let csv_rows: Vec<(f64, u64, f64, f64)> = run
        .times
        .iter()
        .zip(run.errors.iter())
        .map(|(&t, &e)| (eps, seed, t, e))
        .collect();
    write_errors_csv(&dir.join("errors.csv"), &csv_rows)?;
    {
        let file = fs::File::create(dir.join("path.bin"))?;
        path.write_binary(std::io::BufWriter::new(file))?;
    }
    if cfg.write_snapshots {
        let kinetic = run.kinetic.as_ref().expect("kinetic trajectory requested");
        let stride = (steps / cfg.sample_count.max(1)).max(1) as u64;
        if matches!(
            cfg.snapshot_format,
            SnapshotFormat::Csv | SnapshotFormat::Both
        ) {
            write_kinetic_csv(&dir.join("kinetic_snapshots.csv"), kinetic)?;
            write_fluid_csv(&dir.join("fluid_snapshots.csv"), &run.fluid)?;
        }
        if matches!(
            cfg.snapshot_format,
            SnapshotFormat::Binary | SnapshotFormat::Both
        ) {
            write_kinetic_binary(&dir.join("kinetic_snapshots.bin"), kinetic, cfg.dt, stride)?;
        }
    }

    let bounds = corrector_bounds(&run.fluid, &model)?;
    let sup_error = run.errors.iter().fold(0.0f64, |a, &b| a.max(b));
    let report = SimulateReport {
        schema_version: SCHEMA_VERSION,
        mode: "simulate".into(),
        stamp: SchemeStamp::from_config(cfg),
        eps,
        path_seed: seed,
        times: run.times.clone(),
        errors: run.errors.clone(),
        sup_error,
        monitor: run.monitor,
        fluid_monitor: run.fluid_monitor,
        fluid_sup_h2_sq: run.fluid_sup_h2_sq,
        corrector_bounds: Some(bounds),
    };
    write_json(&dir.join("report.json"), &report)?;
    Ok(report)
}

/// Snapshot CSV: `t,x_node,v_node,value` with linear node indices.
fn write_kinetic_csv(path: &Path, traj: &Trajectory<PhaseField>) -> Result<()> {
    use std::io::Write;
    let mut f = std::io::BufWriter::new(fs::File::create(path)?);
    writeln!(f, "t,x_node,v_node,value")?;
    for (t, state) in traj.iter() {
        let grid = state.grid();
        for x in 0..grid.x_len() {
            for v in 0..grid.v_len() {
                writeln!(f, "{t},{x},{v},{:e}", state.x_block(v)[x])?;
            }
        }
    }
    Ok(())
}

fn write_fluid_csv(path: &Path, traj: &Trajectory<ScalarField>) -> Result<()> {
    use std::io::Write;
    let mut f = std::io::BufWriter::new(fs::File::create(path)?);
    writeln!(f, "t,x_node,value")?;
    for (t, state) in traj.iter() {
        for (x, val) in state.values().iter().enumerate() {
            writeln!(f, "{t},{x},{val:e}")?;
        }
    }
    Ok(())
}

/// Compact binary snapshot dump (little-endian): header `u32 dim, u32 nx,
/// u32 nv, f64 dt, u64 nominal_stride, u64 num_samples`, then per sample
/// `f64 t` followed by the `x_len·v_len` values velocity-major.
fn write_kinetic_binary(
    path: &Path,
    traj: &Trajectory<PhaseField>,
    dt: f64,
    stride: u64,
) -> Result<()> {
    use std::io::Write;
    let grid = traj.states[0].grid();
    let mut f = std::io::BufWriter::new(fs::File::create(path)?);
    f.write_all(&(grid.dim() as u32).to_le_bytes())?;
    f.write_all(&(grid.nx() as u32).to_le_bytes())?;
    f.write_all(&(grid.nv() as u32).to_le_bytes())?;
    f.write_all(&dt.to_le_bytes())?;
    f.write_all(&stride.to_le_bytes())?;
    f.write_all(&(traj.len() as u64).to_le_bytes())?;
    for (t, state) in traj.iter() {
        f.write_all(&t.to_le_bytes())?;
        for &v in state.values() {
            f.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}
