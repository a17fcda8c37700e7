//! Command-line driver for the coupled kinetic/diffusion-limit harness.
//!
//! Exit codes: 0 success, 2 configuration or hypothesis-validation failure,
//! 3 solver abort, 4 probe assertion failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use rosseland_core::harness::{self, ExperimentConfig};
use rosseland_core::Error;

#[derive(Parser)]
#[command(
    name = "rosseland-sim",
    version,
    about = "Simulate a kinetic transport-relaxation SPDE next to its nonlinear diffusion limit and verify the strong convergence rate"
)]
struct Cli {
    #[command(subcommand)]
    command: Mode,

    /// Flat key/value config file; built-in defaults are used when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override seed_base.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Replace the eps ladder with this single value.
    #[arg(long, global = true)]
    eps: Option<f64>,

    /// Override num_paths.
    #[arg(long, global = true)]
    paths: Option<usize>,

    /// Override the output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Worker threads (0 = all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
}

#[derive(Subcommand)]
enum Mode {
    /// One coupled run at the leading ladder entry, with optional snapshots.
    Simulate,
    /// The eps-ladder x Monte-Carlo convergence study.
    Converge,
    /// Hypothesis validators, non-degeneracy scan, noise constants.
    Validate,
    /// Accretivity, dissipativity, corrector-scaling, and averaging probes.
    Probe,
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::InvalidConfig(_) | Error::ConfigParse { .. } | Error::Validation(_) => 2,
        Error::SolverAbort { .. } | Error::FixedPoint { .. } | Error::NonFinite(_) => 3,
        Error::ProbeFailure(_) => 4,
        _ => 1,
    }
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig, Error> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::parse(&std::fs::read_to_string(path)?)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed_base = seed;
    }
    if let Some(eps) = cli.eps {
        cfg.eps_ladder = vec![eps];
    }
    if let Some(paths) = cli.paths {
        cfg.num_paths = paths;
    }
    if let Some(out) = &cli.out {
        cfg.out_dir = out.display().to_string();
    }
    if let Some(workers) = cli.workers {
        cfg.workers = workers;
    }
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<u8, Error> {
    let cfg = load_config(cli)?;
    if cfg.workers > 0 {
        // ignore the error if a global pool already exists
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.workers)
            .build_global();
    }
    match cli.command {
        Mode::Validate => {
            let report = harness::run_validate(&cfg)?;
            for (name, check) in [
                ("null flux", &report.hypotheses.null_flux),
                ("second moment", &report.hypotheses.k_positive),
                ("bounds", &report.hypotheses.bounds),
                ("lipschitz", &report.hypotheses.lipschitz),
                ("monotonicity", &report.hypotheses.monotonicity),
            ] {
                println!(
                    "{} {name}: {}",
                    if check.pass { "PASS" } else { "FAIL" },
                    check.detail
                );
            }
            println!(
                "{} non-degeneracy: alpha_hat = {:.4}",
                if report.degeneracy.degenerate {
                    "FAIL"
                } else {
                    "PASS"
                },
                report.degeneracy.alpha_hat
            );
            println!(
                "noise: kappa0 = {:.6}, kappa1 = {:.6}, sum W4^2 = {:.6}",
                report.kappa0_inf, report.kappa1_inf, report.w4_norm_sq_sum
            );
            Ok(if report.passed { 0 } else { 2 })
        }
        Mode::Converge => {
            let report = harness::run_convergence(&cfg)?;
            for s in &report.per_eps {
                println!(
                    "eps {:>7.4}: sup_t mean error {:.6e} (per-path sup {:.6e} +- {:.1e})",
                    s.eps, s.sup_t_mean_error, s.mean_sup_error, s.sup_error_stderr
                );
            }
            if report.exact_coupling {
                println!(
                    "exact coupling detected: all errors at rounding level; slope fit skipped"
                );
            } else if let Some(fit) = &report.fit {
                println!(
                    "fitted rate: slope {:.4} +- {:.4}, intercept {:.4}",
                    fit.slope, fit.slope_stderr, fit.intercept
                );
            }
            if !report.failures.is_empty() {
                eprintln!("{} cell(s) aborted; see report.json", report.failures.len());
                return Ok(3);
            }
            Ok(0)
        }
        Mode::Probe => {
            let report = harness::run_probe(&cfg)?;
            for b in &report.accretivity {
                println!(
                    "accretivity delta {:>7.0e}: {}/{} violations (max ratio {:.3})",
                    b.delta, b.violations, b.trials, b.max_ratio
                );
            }
            println!(
                "dissipativity: max relative gap {:.3e} over {} fields",
                report.dissipativity.max_rel_gap, report.dissipativity.fields
            );
            if let Some(fit) = &report.f3_scaling.fit {
                println!("third-corrector scaling slope: {:.4}", fit.slope);
            }
            println!(
                "averaging estimates across nx {:?}: max/min = {:.4}",
                report.averaging.resolutions, report.averaging.max_over_min
            );
            for f in &report.failures {
                eprintln!("probe failure: {f}");
            }
            Ok(if report.passed { 0 } else { 4 })
        }
        Mode::Simulate => {
            let report = harness::run_simulate(&cfg)?;
            println!(
                "eps {}: sup_t error {:.6e} over {} samples (sup L2^2 {:.6})",
                report.eps,
                report.sup_error,
                report.times.len(),
                report.monitor.sup_l2_sq
            );
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}
