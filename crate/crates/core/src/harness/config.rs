//! Experiment configuration: a flat key/value text format whose keys map
//! one-to-one onto [`ExperimentConfig`] fields. Unknown keys are errors, and
//! every configuration is validated (including the model hypotheses) before
//! any run starts.

use crate::error::{Error, Result};
use crate::fields::{ScalarField, TorusGrid};
use crate::model::{Model, Opacity, VelocityField, VelocityModel};
use crate::noise::{NoiseBasis, NoiseSpec};
use crate::solvers::SchemeConfig;

/// Snapshot output selection for `simulate` mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SnapshotFormat {
    Csv,
    Binary,
    Both,
}

/// Full experiment description; field names are the config-file keys.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub dim: usize,
    pub nx: usize,
    pub nv: usize,
    /// `sine` or `constant`.
    pub velocity: String,
    /// Constant value when `velocity = constant`.
    pub velocity_param: f64,
    /// `constant`, `logistic`, or `exp`.
    pub sigma: String,
    /// `[σ0]` for constant; `[σ*, σ^*, β]` for logistic.
    pub sigma_params: Vec<f64>,
    /// `sine` or `constant`.
    pub rho_in: String,
    /// `[base, amplitude]` for sine; `[value]` for constant.
    pub rho_in_params: Vec<f64>,
    pub noise_modes: usize,
    pub noise_q0: f64,
    pub noise_decay: f64,
    /// Explicit amplitudes overriding the power law (empty = power law).
    pub noise_amplitudes: Vec<f64>,
    pub t_final: f64,
    pub dt: f64,
    pub eps_ladder: Vec<f64>,
    pub num_paths: usize,
    pub seed_base: u64,
    pub sample_count: usize,
    pub positivity_floor: f64,
    pub fluid_solver_tol: f64,
    pub validation_range: f64,
    pub validation_points: usize,
    /// Exponent of the non-degeneracy condition; the averaging estimator uses
    /// the `H^{alpha/2}` norm.
    pub alpha: f64,
    pub out_dir: String,
    /// 0 = use all available cores.
    pub workers: usize,
    pub write_snapshots: bool,
    pub snapshot_format: SnapshotFormat,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dim: 1,
            nx: 128,
            nv: 64,
            velocity: "sine".into(),
            velocity_param: 0.0,
            sigma: "logistic".into(),
            sigma_params: vec![1.0, 2.0, 1.0],
            rho_in: "sine".into(),
            rho_in_params: vec![1.0, 0.5],
            noise_modes: 3,
            noise_q0: 0.25,
            noise_decay: 1.0,
            noise_amplitudes: vec![0.25, 0.15, 0.15],
            t_final: 0.5,
            dt: 5e-4,
            eps_ladder: vec![0.4, 0.2, 0.1, 0.05],
            num_paths: 64,
            seed_base: 7240,
            sample_count: 32,
            positivity_floor: 1e-10,
            fluid_solver_tol: 1e-10,
            validation_range: 8.0,
            validation_points: 20_001,
            alpha: 0.5,
            out_dir: "out".into(),
            workers: 0,
            write_snapshots: false,
            snapshot_format: SnapshotFormat::Csv,
        }
    }
}

fn parse_scalar<T: std::str::FromStr>(line: usize, key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| Error::ConfigParse {
        line,
        msg: format!("cannot parse value {value:?} for key {key}"),
    })
}

fn parse_list(line: usize, key: &str, value: &str) -> Result<Vec<f64>> {
    let trimmed = value.trim().trim_start_matches('[').trim_end_matches(']');
    if trimmed.trim().is_empty() {
        return Ok(Vec::new());
    }
    trimmed
        .split(',')
        .map(|part| parse_scalar::<f64>(line, key, part.trim()))
        .collect()
}

impl ExperimentConfig {
    /// Parse the flat `key = value` format (`#` starts a comment; lists are
    /// comma-separated, optionally bracketed). Keys not listed in
    /// [`ExperimentConfig`] are rejected.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut amplitudes_set = false;
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::ConfigParse {
                line: line_no,
                msg: format!("expected `key = value`, got {line:?}"),
            })?;
            let key = key.trim();
            let value = value.trim();
            match key {
                "dim" => cfg.dim = parse_scalar(line_no, key, value)?,
                "nx" => cfg.nx = parse_scalar(line_no, key, value)?,
                "nv" => cfg.nv = parse_scalar(line_no, key, value)?,
                // `a` is the conventional name of the velocity map
                "velocity" | "a" => cfg.velocity = value.to_string(),
                "velocity_param" => cfg.velocity_param = parse_scalar(line_no, key, value)?,
                "sigma" => cfg.sigma = value.to_string(),
                "sigma_params" => cfg.sigma_params = parse_list(line_no, key, value)?,
                "rho_in" => cfg.rho_in = value.to_string(),
                "rho_in_params" => cfg.rho_in_params = parse_list(line_no, key, value)?,
                "noise_modes" => cfg.noise_modes = parse_scalar(line_no, key, value)?,
                "noise_q0" => cfg.noise_q0 = parse_scalar(line_no, key, value)?,
                "noise_decay" => cfg.noise_decay = parse_scalar(line_no, key, value)?,
                "noise_amplitudes" => {
                    cfg.noise_amplitudes = parse_list(line_no, key, value)?;
                    amplitudes_set = true;
                }
                "t_final" => cfg.t_final = parse_scalar(line_no, key, value)?,
                "dt" => cfg.dt = parse_scalar(line_no, key, value)?,
                "eps_ladder" => cfg.eps_ladder = parse_list(line_no, key, value)?,
                "num_paths" => cfg.num_paths = parse_scalar(line_no, key, value)?,
                "seed_base" => cfg.seed_base = parse_scalar(line_no, key, value)?,
                "sample_count" => cfg.sample_count = parse_scalar(line_no, key, value)?,
                "positivity_floor" => cfg.positivity_floor = parse_scalar(line_no, key, value)?,
                "fluid_solver_tol" => cfg.fluid_solver_tol = parse_scalar(line_no, key, value)?,
                "validation_range" => cfg.validation_range = parse_scalar(line_no, key, value)?,
                "validation_points" => cfg.validation_points = parse_scalar(line_no, key, value)?,
                "alpha" => cfg.alpha = parse_scalar(line_no, key, value)?,
                "out_dir" => cfg.out_dir = value.to_string(),
                "workers" => cfg.workers = parse_scalar(line_no, key, value)?,
                "write_snapshots" => cfg.write_snapshots = parse_scalar(line_no, key, value)?,
                "snapshot_format" => {
                    cfg.snapshot_format = match value {
                        "csv" => SnapshotFormat::Csv,
                        "binary" => SnapshotFormat::Binary,
                        "both" => SnapshotFormat::Both,
                        other => {
                            return Err(Error::ConfigParse {
                                line: line_no,
                                msg: format!(
                                    "snapshot_format must be csv, binary, or both, got {other:?}"
                                ),
                            })
                        }
                    }
                }
                other => {
                    return Err(Error::ConfigParse {
                        line: line_no,
                        msg: format!("unknown key {other:?}"),
                    })
                }
            }
        }
        // when modes were changed but amplitudes not given, fall back to the
        // power law instead of the stale default list
        if !amplitudes_set && cfg.noise_modes != cfg.noise_amplitudes.len() {
            cfg.noise_amplitudes.clear();
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.eps_ladder.is_empty() {
            return Err(Error::InvalidConfig("eps_ladder must be nonempty".into()));
        }
        if self.eps_ladder.iter().any(|&e| e <= 0.0 || e > 1.0) {
            return Err(Error::InvalidConfig(
                "eps_ladder entries must lie in (0, 1]".into(),
            ));
        }
        if self.eps_ladder.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::InvalidConfig(
                "eps_ladder must be strictly decreasing".into(),
            ));
        }
        if self.num_paths == 0 {
            return Err(Error::InvalidConfig("num_paths must be >= 1".into()));
        }
        if self.sample_count == 0 {
            return Err(Error::InvalidConfig("sample_count must be >= 1".into()));
        }
        let grid = self.grid()?;
        self.scheme(self.eps_ladder[0]).validate()?;
        self.build_model(grid)?;
        self.build_basis(grid)?;
        self.build_rho_in(grid)?;
        Ok(())
    }

    pub fn grid(&self) -> Result<TorusGrid> {
        TorusGrid::new(self.dim, self.nx, self.nv)
    }

    /// Grid with a different spatial resolution (used by the resolution
    /// refinement study).
    pub fn grid_with_nx(&self, nx: usize) -> Result<TorusGrid> {
        TorusGrid::new(self.dim, nx, self.nv)
    }

    pub fn scheme(&self, eps: f64) -> SchemeConfig {
        SchemeConfig {
            eps,
            dt: self.dt,
            t_final: self.t_final,
            positivity_floor: self.positivity_floor,
            fluid_solver_tol: self.fluid_solver_tol,
        }
    }

    pub fn build_model(&self, grid: TorusGrid) -> Result<Model> {
        let velocity = match self.velocity.as_str() {
            "sine" => VelocityField::new(grid, VelocityModel::Sine),
            "constant" => VelocityField::new(grid, VelocityModel::Constant(self.velocity_param)),
            other => {
                return Err(Error::InvalidConfig(format!(
                    "unknown velocity model {other:?} (expected sine or constant)"
                )))
            }
        };
        let opacity = match self.sigma.as_str() {
            "constant" => {
                let s0 = self
                    .sigma_params
                    .first()
                    .copied()
                    .ok_or_else(|| Error::InvalidConfig("sigma_params needs [σ0]".into()))?;
                Opacity::constant(s0)?
            }
            "logistic" => {
                if self.sigma_params.len() != 3 {
                    return Err(Error::InvalidConfig(
                        "logistic sigma needs sigma_params = [lo, hi, beta]".into(),
                    ));
                }
                Opacity::logistic(
                    self.sigma_params[0],
                    self.sigma_params[1],
                    self.sigma_params[2],
                )?
            }
            "exp" => Opacity::exp_decay(),
            other => {
                return Err(Error::InvalidConfig(format!(
                    "unknown sigma model {other:?} (expected constant, logistic, or exp)"
                )))
            }
        };
        Ok(Model { velocity, opacity })
    }

    pub fn noise_spec(&self) -> NoiseSpec {
        NoiseSpec {
            num_modes: self.noise_modes,
            q0: self.noise_q0,
            decay: self.noise_decay,
            amplitudes: if self.noise_amplitudes.is_empty() {
                None
            } else {
                Some(self.noise_amplitudes.clone())
            },
        }
    }

    pub fn build_basis(&self, grid: TorusGrid) -> Result<NoiseBasis> {
        NoiseBasis::build(grid, &self.noise_spec())
    }

    pub fn build_rho_in(&self, grid: TorusGrid) -> Result<ScalarField> {
        match self.rho_in.as_str() {
            "constant" => {
                let c = self.rho_in_params.first().copied().unwrap_or(1.0);
                if c < 0.0 {
                    return Err(Error::InvalidConfig(
                        "initial density must be nonnegative".into(),
                    ));
                }
                Ok(ScalarField::constant(grid, c))
            }
            "sine" => {
                let base = self.rho_in_params.first().copied().unwrap_or(1.0);
                let amp = self.rho_in_params.get(1).copied().unwrap_or(0.5);
                if base - amp.abs() < 0.0 {
                    return Err(Error::InvalidConfig(
                        "initial density must stay nonnegative".into(),
                    ));
                }
                Ok(ScalarField::from_fn(grid, |x| {
                    base + amp * (2.0 * std::f64::consts::PI * x[0]).sin()
                }))
            }
            other => Err(Error::InvalidConfig(format!(
                "unknown rho_in model {other:?} (expected sine or constant)"
            ))),
        }
    }

    /// Per-path seed: `seed_base + path_index`, shared across the ladder so
    /// the Monte Carlo cells are coupled by common paths.
    pub fn path_seed(&self, path_index: usize) -> u64 {
        self.seed_base.wrapping_add(path_index as u64)
    }
}
