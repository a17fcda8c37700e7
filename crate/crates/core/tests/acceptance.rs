//! Acceptance suite: every criterion of the verification harness at its
//! stated tolerance, one pass/fail line per criterion (run with
//! `--nocapture` to see them).

use std::f64::consts::PI;
use std::sync::OnceLock;
use std::time::Instant;

use rosseland_core::diagnostics::accretivity_battery;
use rosseland_core::fields::{PhaseField, ScalarField, TorusGrid};
use rosseland_core::harness::{
    self, averaging_study, dissipativity_sweep, f3_scaling_study, ConvergenceReport,
    ExperimentConfig,
};
use rosseland_core::hilbert::{
    corrector_f1, corrector_f1_residual, corrector_f2, corrector_f2_residual, corrector_f3,
};
use rosseland_core::model::{degeneracy_scan, Model, Opacity, VelocityField, VelocityModel};
use rosseland_core::noise::{NoiseBasis, NoiseSpec, WienerPath};
use rosseland_core::solvers::{
    coupled_run, sample_steps, CoupledOptions, FluidSolver, KineticSolver, SchemeConfig,
};

fn pass(id: u32, name: &str, detail: impl std::fmt::Display) {
    println!("ACCEPTANCE {id:02} {name}: PASS — {detail}");
}

fn fail(id: u32, name: &str, detail: impl std::fmt::Display) -> ! {
    println!("ACCEPTANCE {id:02} {name}: FAIL — {detail}");
    panic!("acceptance criterion {id} ({name}) failed: {detail}");
}

struct DefaultStudy {
    _dir: tempfile::TempDir,
    report: ConvergenceReport,
    elapsed_secs: f64,
}

/// The default experiment (shared by the rate criterion and the uniform-bound
/// monitor): logistic opacity, sine velocity, three-mode noise,
/// eps ladder {0.4, 0.2, 0.1, 0.05}, 64 paths, nx = 128, nv = 64,
/// dt = 5e-4, T = 0.5.
fn default_study() -> &'static DefaultStudy {
    static CELL: OnceLock<DefaultStudy> = OnceLock::new();
    CELL.get_or_init(|| {
        let dir = tempfile::tempdir().expect("tempdir");
        let mut cfg = ExperimentConfig::default();
        cfg.out_dir = dir.path().display().to_string();
        let start = Instant::now();
        let report = harness::run_convergence(&cfg).expect("default convergence study");
        DefaultStudy {
            _dir: dir,
            report,
            elapsed_secs: start.elapsed().as_secs_f64(),
        }
    })
}

fn default_model(grid: TorusGrid) -> Model {
    Model {
        velocity: VelocityField::new(grid, VelocityModel::Sine),
        opacity: Opacity::logistic(1.0, 2.0, 1.0).unwrap(),
    }
}

fn default_scheme(eps: f64) -> SchemeConfig {
    SchemeConfig {
        eps,
        dt: 5e-4,
        t_final: 0.5,
        positivity_floor: 1e-10,
        fluid_solver_tol: 1e-10,
    }
}

#[test]
fn criterion_01_convergence_rate() {
    let (id, name) = (1, "convergence-rate");
    let study = default_study();
    if !study.report.failures.is_empty() {
        fail(
            id,
            name,
            format!("{} cells aborted", study.report.failures.len()),
        );
    }
    let fit = match &study.report.fit {
        Some(fit) => fit,
        None => fail(id, name, "no slope fit produced"),
    };
    if !(0.8..=1.3).contains(&fit.slope) {
        fail(
            id,
            name,
            format!("slope {:.4} outside [0.8, 1.3]", fit.slope),
        );
    }
    let errs: Vec<String> = study
        .report
        .per_eps
        .iter()
        .map(|s| format!("{:.4e}", s.sup_t_mean_error))
        .collect();
    pass(
        id,
        name,
        format!(
            "slope {:.4} ± {:.4} in [0.8, 1.3]; sup_t E-errors {:?}; {} cells in {:.1}s",
            fit.slope,
            fit.slope_stderr,
            errs,
            study.report.stamp.eps_ladder.len() * study.report.stamp.num_paths,
            study.elapsed_secs
        ),
    );
}

#[test]
fn criterion_02_exact_pathwise_coupling() {
    let (id, name) = (2, "exact-coupling");
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ExperimentConfig::default();
    cfg.rho_in = "constant".into();
    cfg.rho_in_params = vec![1.0];
    cfg.noise_modes = 1;
    cfg.noise_amplitudes = vec![0.25];
    cfg.num_paths = 2;
    cfg.out_dir = dir.path().display().to_string();
    let report = harness::run_convergence(&cfg).unwrap();
    let worst = report
        .per_eps
        .iter()
        .flat_map(|s| s.per_path_sup.iter())
        .fold(0.0f64, |a, &b| a.max(b));
    if worst > 1e-10 {
        fail(
            id,
            name,
            format!("worst pathwise error {worst:.3e} > 1e-10"),
        );
    }
    if !report.exact_coupling || !report.degenerate_fit {
        fail(id, name, "exact-coupling flag not raised");
    }
    pass(
        id,
        name,
        format!("worst error {worst:.3e} ≤ 1e-10 over full ladder; slope fit skipped"),
    );
}

#[test]
fn criterion_03_dissipativity_identity() {
    let (id, name) = (3, "dissipativity");
    let cfg = ExperimentConfig::default();
    let sweep = dissipativity_sweep(&cfg, 1000).unwrap();
    if sweep.max_rel_gap > 1e-12 {
        fail(
            id,
            name,
            format!("identity gap {:.3e} > 1e-12", sweep.max_rel_gap),
        );
    }
    if sweep.positive_lhs > 0 {
        fail(
            id,
            name,
            format!("{} fields with positive pairing", sweep.positive_lhs),
        );
    }
    pass(
        id,
        name,
        format!(
            "max relative gap {:.3e} ≤ 1e-12 and pairing ≤ 0 over {} random fields",
            sweep.max_rel_gap, sweep.fields
        ),
    );
}

#[test]
fn criterion_04_deterministic_conservation() {
    let (id, name) = (4, "mass-conservation");
    let grid = TorusGrid::new(1, 128, 64).unwrap();
    let model = default_model(grid);
    let basis = NoiseBasis::build(grid, &NoiseSpec::off()).unwrap();
    let scheme = default_scheme(0.2);
    let steps = scheme.num_steps();
    let path = WienerPath::sample(0, scheme.dt, steps, 1).unwrap();

    let f0 = PhaseField::from_fn(grid, |x, v| {
        1.0 + 0.5 * (2.0 * PI * x[0]).sin() + 0.1 * (2.0 * PI * (x[0] + v[0])).cos()
    });
    let mass = |vals: &[f64]| vals.iter().sum::<f64>() / vals.len() as f64;
    let mut kin = KineticSolver::new(grid, scheme, &model, &basis).unwrap();
    let (ktraj, _) = kin.solve(&f0, &path, &[steps]).unwrap();
    let kin_drift = (mass(ktraj.states[1].values()) - mass(f0.values())).abs() / scheme.t_final;
    if kin_drift > 1e-12 {
        fail(
            id,
            name,
            format!("kinetic mass drift {kin_drift:.3e} > 1e-12 per unit time"),
        );
    }

    let rho0 = ScalarField::from_fn(grid, |x| 1.0 + 0.5 * (2.0 * PI * x[0]).sin());
    let mut flu = FluidSolver::new(grid, scheme, &model, &basis).unwrap();
    let ftraj = flu.solve(&rho0, &path, &[steps]).unwrap();
    let flu_drift = (mass(ftraj.states[1].values()) - mass(rho0.values())).abs();
    if flu_drift > 1e-10 {
        fail(
            id,
            name,
            format!("fluid mass drift {flu_drift:.3e} > 1e-10"),
        );
    }
    pass(
        id,
        name,
        format!("kinetic drift {kin_drift:.3e}/unit time, fluid drift {flu_drift:.3e}"),
    );
}

#[test]
fn criterion_05_relaxation_ode_oracle() {
    let (id, name) = (5, "relaxation-ode");
    let grid = TorusGrid::new(1, 64, 64).unwrap();
    let model = default_model(grid);
    let basis = NoiseBasis::build(grid, &NoiseSpec::off()).unwrap();
    let scheme = SchemeConfig {
        eps: 1.0,
        dt: 1e-3,
        t_final: 1.0,
        positivity_floor: 1e-10,
        fluid_solver_tol: 1e-10,
    };
    let steps = scheme.num_steps();
    let path = WienerPath::sample(0, scheme.dt, steps, 1).unwrap();
    let f0 = PhaseField::from_fn(grid, |_, v| 1.0 + (2.0 * PI * v[0]).sin());
    let mut kin = KineticSolver::new(grid, scheme, &model, &basis).unwrap();
    let (traj, _) = kin.solve(&f0, &path, &[steps]).unwrap();
    let f_end = &traj.states[1];
    let decay = (-model.opacity.value(1.0) * scheme.t_final).exp();
    let mut worst = 0.0f64;
    for v_lin in 0..grid.v_len() {
        let v = grid.v_coord(v_lin)[0];
        let expect = 1.0 + (2.0 * PI * v).sin() * decay;
        for &got in f_end.x_block(v_lin) {
            worst = worst.max((got - expect).abs());
        }
    }
    if worst > 1e-8 {
        fail(id, name, format!("max-norm error {worst:.3e} > 1e-8"));
    }
    pass(
        id,
        name,
        format!("max-norm error {worst:.3e} ≤ 1e-8 at T = 1, dt = 1e-3"),
    );
}

#[test]
fn criterion_06_heat_kernel_oracle() {
    let (id, name) = (6, "heat-kernel");
    let grid = TorusGrid::new(1, 128, 64).unwrap();
    let model = Model {
        velocity: VelocityField::new(grid, VelocityModel::Sine),
        opacity: Opacity::constant(1.0).unwrap(),
    };
    let basis = NoiseBasis::build(grid, &NoiseSpec::off()).unwrap();
    let scheme = default_scheme(0.1);
    let steps = scheme.num_steps();
    let path = WienerPath::sample(0, scheme.dt, steps, 1).unwrap();
    let rho0 = ScalarField::from_fn(grid, |x| {
        1.0 + 0.5 * (2.0 * PI * x[0]).sin() + 0.25 * (4.0 * PI * x[0]).cos()
    });
    let mut flu = FluidSolver::new(grid, scheme, &model, &basis).unwrap();
    let k_avg = flu.k_matrix().entry(0, 0);
    let traj = flu.solve(&rho0, &path, &[steps]).unwrap();
    let spec_start = rho0.to_spectral();
    let spec_end = traj.states[1].to_spectral();
    let mut worst = 0.0f64;
    for k in 0..=4i64 {
        let decay = (-(2.0 * PI * k as f64).powi(2) * k_avg * scheme.t_final).exp();
        let expect = spec_start.coeff_at(&[k], 0).unwrap() * decay;
        let got = spec_end.coeff_at(&[k], 0).unwrap();
        worst = worst.max((got - expect).norm());
    }
    if worst > 1e-10 {
        fail(id, name, format!("per-mode error {worst:.3e} > 1e-10"));
    }
    pass(
        id,
        name,
        format!("per-mode error {worst:.3e} ≤ 1e-10 at T = 0.5"),
    );
}

#[test]
fn criterion_07_corrector_identities() {
    let (id, name) = (7, "corrector-identities");
    let grid = TorusGrid::new(1, 128, 64).unwrap();
    let model = default_model(grid);
    let basis = NoiseBasis::build(grid, &NoiseSpec::default_three_mode()).unwrap();
    let eps = 0.2;
    let scheme = default_scheme(eps);
    let steps = scheme.num_steps();
    let path = WienerPath::sample(3, scheme.dt, steps, 7240).unwrap();
    let rho_in = ScalarField::from_fn(grid, |x| 1.0 + 0.5 * (2.0 * PI * x[0]).sin());
    let record = sample_steps(steps, 32);
    let run = coupled_run(
        grid,
        scheme,
        &model,
        &basis,
        &path,
        &rho_in,
        &record,
        CoupledOptions {
            store_kinetic: false,
            store_rho_every_step: true,
        },
    )
    .unwrap();
    let rho_path = run.rho_every_step.as_ref().unwrap();
    let f3 = corrector_f3(rho_path, &model, &basis, &path, eps, &record).unwrap();

    let mut worst_residual = 0.0f64;
    let mut worst_mean = 0.0f64;
    for rho in &run.fluid.states {
        let f1 = corrector_f1(rho, &model).unwrap();
        let f2 = corrector_f2(rho, &model).unwrap();
        worst_residual = worst_residual
            .max(corrector_f1_residual(&f1, rho, &model).unwrap())
            .max(corrector_f2_residual(&f2, rho, &model).unwrap());
        worst_mean = worst_mean
            .max(f1.velocity_average().linf_norm())
            .max(f2.velocity_average().linf_norm());
    }
    for state in &f3.states {
        worst_mean = worst_mean.max(state.velocity_average().linf_norm());
    }
    if worst_residual > 1e-12 {
        fail(
            id,
            name,
            format!("identity residual {worst_residual:.3e} > 1e-12"),
        );
    }
    if worst_mean > 1e-12 {
        fail(id, name, format!("corrector mean {worst_mean:.3e} > 1e-12"));
    }
    pass(
        id,
        name,
        format!(
            "identity residuals ≤ {worst_residual:.3e}, corrector means ≤ {worst_mean:.3e} at all {} samples",
            run.fluid.len()
        ),
    );
}

#[test]
fn criterion_08_f3_scaling() {
    let (id, name) = (8, "f3-scaling");
    let mut cfg = ExperimentConfig::default();
    cfg.num_paths = 32;
    let study = f3_scaling_study(&cfg).unwrap();
    let fit = match &study.fit {
        Some(fit) => fit,
        None => fail(id, name, "third corrector unexpectedly trivial"),
    };
    if !(-1.3..=-0.7).contains(&fit.slope) {
        fail(
            id,
            name,
            format!("slope {:.4} outside [-1.3, -0.7]", fit.slope),
        );
    }
    pass(
        id,
        name,
        format!(
            "slope {:.4} in [-1.3, -0.7] over eps {:?} (M = {})",
            fit.slope, study.eps, study.num_paths
        ),
    );
}

#[test]
fn criterion_09_accretivity_battery() {
    let (id, name) = (9, "accretivity");
    let opacity = Opacity::logistic(1.0, 2.0, 1.0).unwrap();
    let mut max_ratio = f64::NEG_INFINITY;
    for (i, &delta) in [1e-1, 1e-2, 1e-3].iter().enumerate() {
        let battery = accretivity_battery(&opacity, delta, 10_000, 64, 7240 + i as u64).unwrap();
        if battery.violations > 0 {
            fail(
                id,
                name,
                format!("{} violations at delta {delta:e}", battery.violations),
            );
        }
        max_ratio = max_ratio.max(battery.max_ratio);
    }
    pass(
        id,
        name,
        format!("0 violations in 3 × 10⁴ trials; max J/bound = {max_ratio:.3e}"),
    );
}

#[test]
fn criterion_10_averaging_boundedness() {
    let (id, name) = (10, "averaging-boundedness");
    let cfg = ExperimentConfig::default();
    let study = averaging_study(&cfg).unwrap();
    if study.max_over_min >= 2.0 {
        fail(
            id,
            name,
            format!("estimates vary by factor {:.3} ≥ 2", study.max_over_min),
        );
    }
    let means: Vec<String> = study
        .estimates
        .iter()
        .map(|e| format!("{:.6}", e.mean))
        .collect();
    pass(
        id,
        name,
        format!(
            "estimates {:?} across nx {:?} vary by factor {:.4} < 2 (eps = 1, M = {})",
            means, study.resolutions, study.max_over_min, study.num_paths
        ),
    );
}

#[test]
fn criterion_11_nondegeneracy() {
    let (id, name) = (11, "non-degeneracy");
    let grid = TorusGrid::new(1, 32, 64).unwrap();
    let sine = VelocityField::new(grid, VelocityModel::Sine);
    let ladder = [1e-1, 1e-2, 1e-3, 1e-4];
    let scan = degeneracy_scan(&sine, &ladder, 41, 1 << 20).unwrap();
    if !(0.45..=0.6).contains(&scan.alpha_hat) {
        fail(
            id,
            name,
            format!("alpha_hat {:.4} outside [0.45, 0.6]", scan.alpha_hat),
        );
    }
    if scan.degenerate {
        fail(id, name, "sine map wrongly flagged degenerate");
    }
    let flat = VelocityField::new(grid, VelocityModel::Constant(0.3));
    let flat_scan = degeneracy_scan(&flat, &ladder, 11, 1 << 14).unwrap();
    if !flat_scan.degenerate {
        fail(id, name, "constant map not flagged degenerate");
    }
    pass(
        id,
        name,
        format!(
            "alpha_hat {:.4} in [0.45, 0.6]; constant map flagged degenerate (alpha_hat {:.4})",
            scan.alpha_hat, flat_scan.alpha_hat
        ),
    );
}

#[test]
fn criterion_12_uniform_l2_monitor() {
    let (id, name) = (12, "uniform-l2-bound");
    let study = default_study();
    let base = study.report.per_eps[0].sup_l2_sq_max;
    let max = study
        .report
        .per_eps
        .iter()
        .map(|s| s.sup_l2_sq_max)
        .fold(0.0f64, f64::max);
    if !max.is_finite() || base <= 0.0 {
        fail(id, name, "monitor not finite");
    }
    if max > 2.0 * base {
        fail(
            id,
            name,
            format!("sup L2² grows across the ladder: max {max:.4} > 2 × {base:.4}"),
        );
    }
    let per_eps: Vec<String> = study
        .report
        .per_eps
        .iter()
        .map(|s| format!("{:.4}", s.sup_l2_sq_max))
        .collect();
    pass(
        id,
        name,
        format!("sup_t,paths ‖f‖²_L² per eps = {per_eps:?}; max within 2× of the eps = 0.4 value"),
    );
}
