//! Finite smooth noise basis and seeded Brownian increment paths.
//!
//! The driving noise is `Σ_k Qe_k dβ_k` with a finite family of smooth
//! trigonometric modes `Qe_k` on the spatial torus. All regularity constants
//! (`κ_{0,∞}`, `κ_{1,∞}`, the summed `W^{4,∞}` norms) are finite by
//! construction and are computed analytically from the mode shapes. The
//! Stratonovich drift correction uses `G = ½ Σ_k (Qe_k)²`.
//!
//! Increments for a whole run are pre-generated from a single seed so every
//! consumer (both solvers and the third-corrector recursion) reads the same
//! numbers positionally, regardless of its own substepping.

use std::io::{Read, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::fields::{PhaseField, ScalarField, TorusGrid};

/// Analytic shape of one noise mode (amplitude excluded).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ModeShape {
    Constant,
    Cos { axis: usize, freq: usize },
    Sin { axis: usize, freq: usize },
}

impl ModeShape {
    pub fn eval(&self, x: &[f64]) -> f64 {
        match *self {
            ModeShape::Constant => 1.0,
            ModeShape::Cos { axis, freq } => {
                (2.0 * std::f64::consts::PI * freq as f64 * x[axis]).cos()
            }
            ModeShape::Sin { axis, freq } => {
                (2.0 * std::f64::consts::PI * freq as f64 * x[axis]).sin()
            }
        }
    }

    /// Sup norm of the order-`m` derivative along `axis` (unit amplitude).
    fn deriv_sup(&self, axis: usize, order: u32) -> f64 {
        match *self {
            ModeShape::Constant => {
                if order == 0 {
                    1.0
                } else {
                    0.0
                }
            }
            ModeShape::Cos { axis: a, freq } | ModeShape::Sin { axis: a, freq } => {
                if axis == a {
                    (2.0 * std::f64::consts::PI * freq as f64).powi(order as i32)
                } else if order == 0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

/// One mode `Qe_k`: analytic shape, amplitude, and tabulated nodal values.
#[derive(Debug, Clone)]
pub struct NoiseMode {
    pub shape: ModeShape,
    pub amplitude: f64,
    field: ScalarField,
}

impl NoiseMode {
    pub fn field(&self) -> &ScalarField {
        &self.field
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.amplitude * self.shape.eval(x)
    }
}

/// Construction parameters for a noise basis.
#[derive(Debug, Clone)]
pub struct NoiseSpec {
    pub num_modes: usize,
    /// Leading amplitude of the power-law `q_k = q0 (1+k)^{-decay}`.
    pub q0: f64,
    pub decay: f64,
    /// Explicit per-mode amplitudes; overrides the power law when present.
    pub amplitudes: Option<Vec<f64>>,
}

impl NoiseSpec {
    pub fn power_law(num_modes: usize, q0: f64, decay: f64) -> Self {
        Self {
            num_modes,
            q0,
            decay,
            amplitudes: None,
        }
    }

    /// The default three-mode basis: a spatially uniform mode plus the two
    /// first trigonometric modes.
    pub fn default_three_mode() -> Self {
        Self {
            num_modes: 3,
            q0: 0.25,
            decay: 1.0,
            amplitudes: Some(vec![0.25, 0.15, 0.15]),
        }
    }

    /// Deterministic case: no noise at all.
    pub fn off() -> Self {
        Self {
            num_modes: 0,
            q0: 0.0,
            decay: 1.0,
            amplitudes: None,
        }
    }

    /// A single spatially uniform mode of the given amplitude; with constant
    /// initial data this makes both solvers pathwise identical.
    pub fn uniform_only(amplitude: f64) -> Self {
        Self {
            num_modes: 1,
            q0: amplitude,
            decay: 1.0,
            amplitudes: Some(vec![amplitude]),
        }
    }
}

/// Finite smooth covariance basis with precomputed regularity constants.
#[derive(Debug, Clone)]
pub struct NoiseBasis {
    grid: TorusGrid,
    modes: Vec<NoiseMode>,
    kappa0_inf: f64,
    kappa1_inf: f64,
    w4_sq_sum: f64,
    g: ScalarField,
}

impl NoiseBasis {
    /// Mode `k` gets the `k`-th entry of the low-frequency ladder
    /// {constant, cos/sin of frequency 1 per axis, cos/sin of frequency 2, …}
    /// and amplitude `q0 (1+k)^{-decay}` unless explicit amplitudes are given.
    pub fn build(grid: TorusGrid, spec: &NoiseSpec) -> Result<Self> {
        if let Some(amps) = &spec.amplitudes {
            if amps.len() != spec.num_modes {
                return Err(Error::InvalidConfig(format!(
                    "noise basis declares {} modes but {} amplitudes",
                    spec.num_modes,
                    amps.len()
                )));
            }
        }
        if spec.decay <= 0.0 {
            return Err(Error::InvalidConfig("noise decay must be positive".into()));
        }
        let shapes = mode_ladder(grid.dim(), spec.num_modes);
        let mut modes = Vec::with_capacity(spec.num_modes);
        for (k, shape) in shapes.into_iter().enumerate() {
            let amplitude = match &spec.amplitudes {
                Some(amps) => amps[k],
                None => spec.q0 * (1.0 + k as f64).powf(-spec.decay),
            };
            let field = ScalarField::from_fn(grid, |x| amplitude * shape.eval(x));
            modes.push(NoiseMode {
                shape,
                amplitude,
                field,
            });
        }

        let dim = grid.dim();
        let mut kappa0 = 0.0;
        let mut kappa1 = 0.0;
        let mut w4 = 0.0;
        for m in &modes {
            let a2 = m.amplitude * m.amplitude;
            kappa0 += a2;
            let mut w4_mode: f64 = 0.0;
            for order in 0..=4u32 {
                for axis in 0..dim {
                    let d = m.shape.deriv_sup(axis, order);
                    if order == 1 {
                        kappa1 += a2 * d * d;
                    }
                    w4_mode = w4_mode.max(m.amplitude.abs() * d);
                }
            }
            w4 += w4_mode * w4_mode;
        }

        let mut g_values = vec![0.0f64; grid.x_len()];
        for m in &modes {
            for (g, &q) in g_values.iter_mut().zip(m.field.values().iter()) {
                *g += 0.5 * q * q;
            }
        }
        let g = ScalarField::from_values(grid, g_values)?;

        Ok(Self {
            grid,
            modes,
            kappa0_inf: kappa0,
            kappa1_inf: kappa1,
            w4_sq_sum: w4,
            g,
        })
    }

    pub fn grid(&self) -> TorusGrid {
        self.grid
    }

    pub fn num_modes(&self) -> usize {
        self.modes.len()
    }

    pub fn modes(&self) -> &[NoiseMode] {
        &self.modes
    }

    /// `κ_{0,∞} = Σ_k sup|Qe_k|²`.
    pub fn kappa0_inf(&self) -> f64 {
        self.kappa0_inf
    }

    /// `κ_{1,∞} = Σ_{k,i} sup|∂_i Qe_k|²`.
    pub fn kappa1_inf(&self) -> f64 {
        self.kappa1_inf
    }

    /// `Σ_k ‖Qe_k‖²_{W^{4,∞}}`; recorded for the basis report, not consumed
    /// downstream.
    pub fn w4_norm_sq_sum(&self) -> f64 {
        self.w4_sq_sum
    }

    /// `G = ½ Σ_k (Qe_k)²`, nonnegative pointwise.
    pub fn g_field(&self) -> &ScalarField {
        &self.g
    }

    /// `Σ_k Qe_k(x) Δβ_k` for one step's increments, written into `out`.
    pub fn amplitude_field(&self, increments: &[f64], out: &mut [f64]) {
        debug_assert_eq!(increments.len(), self.modes.len());
        debug_assert_eq!(out.len(), self.grid.x_len());
        out.fill(0.0);
        for (m, &db) in self.modes.iter().zip(increments.iter()) {
            for (o, &q) in out.iter_mut().zip(m.field.values().iter()) {
                *o += q * db;
            }
        }
    }
}

fn mode_ladder(dim: usize, count: usize) -> Vec<ModeShape> {
    let mut shapes = Vec::with_capacity(count);
    if count == 0 {
        return shapes;
    }
    shapes.push(ModeShape::Constant);
    let mut freq = 1usize;
    'outer: loop {
        for axis in 0..dim {
            for shape in [ModeShape::Cos { axis, freq }, ModeShape::Sin { axis, freq }] {
                if shapes.len() == count {
                    break 'outer;
                }
                shapes.push(shape);
            }
        }
        freq += 1;
    }
    shapes
}

/// Stratonovich→Itô drift `G·f` for phase-space data (`G` constant in v).
pub fn stratonovich_drift_phase(f: &PhaseField, g: &ScalarField) -> Result<PhaseField> {
    if f.grid() != g.grid() {
        return Err(Error::GridMismatch("drift: G on different grid".into()));
    }
    let block = f.grid().x_len();
    let mut values = Vec::with_capacity(f.values().len());
    for v in 0..f.grid().v_len() {
        for (fv, gv) in f.x_block(v).iter().zip(g.values().iter()) {
            values.push(fv * gv);
        }
    }
    debug_assert_eq!(values.len(), block * f.grid().v_len());
    PhaseField::from_values(f.grid(), values)
}

/// Stratonovich→Itô drift `G·ρ` for spatial data.
pub fn stratonovich_drift_scalar(rho: &ScalarField, g: &ScalarField) -> Result<ScalarField> {
    rho.zip_with(g, |a, b| a * b)
}

/// Pre-generated Brownian increments, one stream per mode, `Δβ ~ N(0, dt)`.
#[derive(Debug, Clone, PartialEq)]
pub struct WienerPath {
    seed: u64,
    dt: f64,
    steps: usize,
    num_modes: usize,
    /// Step-major layout: `increments[n * num_modes + k]`.
    increments: Vec<f64>,
}

impl WienerPath {
    pub fn sample(num_modes: usize, dt: f64, steps: usize, seed: u64) -> Result<Self> {
        if dt <= 0.0 {
            return Err(Error::InvalidConfig(format!(
                "wiener path needs positive dt, got {dt}"
            )));
        }
        if steps == 0 {
            return Err(Error::InvalidConfig("wiener path needs >= 1 step".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scale = dt.sqrt();
        let normal = StandardNormal;
        let increments = (0..steps * num_modes)
            .map(|_| {
                let z: f64 = normal.sample(&mut rng);
                scale * z
            })
            .collect();
        Ok(Self {
            seed,
            dt,
            steps,
            num_modes,
            increments,
        })
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn num_modes(&self) -> usize {
        self.num_modes
    }

    pub fn increment(&self, step: usize, mode: usize) -> f64 {
        self.increments[step * self.num_modes + mode]
    }

    /// All mode increments of one step.
    pub fn increments_at(&self, step: usize) -> &[f64] {
        &self.increments[step * self.num_modes..(step + 1) * self.num_modes]
    }

    /// Copy with every increment from `from_step` onwards replaced by the
    /// given filler; used to check that consumers are adapted.
    pub fn truncated_after(&self, from_step: usize, filler: f64) -> Self {
        let mut out = self.clone();
        for n in from_step..self.steps {
            for k in 0..self.num_modes {
                out.increments[n * self.num_modes + k] = filler;
            }
        }
        out
    }

    /// Binary replay layout (little-endian): `u32` mode count, `u64` step
    /// count, `f64` dt, then the increments step-major (each step's modes
    /// form one row).
    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(&(self.num_modes as u32).to_le_bytes())?;
        w.write_all(&(self.steps as u64).to_le_bytes())?;
        w.write_all(&self.dt.to_le_bytes())?;
        for inc in &self.increments {
            w.write_all(&inc.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut r: R, seed_hint: u64) -> Result<Self> {
        let mut b4 = [0u8; 4];
        let mut b8 = [0u8; 8];
        r.read_exact(&mut b4)?;
        let num_modes = u32::from_le_bytes(b4) as usize;
        r.read_exact(&mut b8)?;
        let steps = u64::from_le_bytes(b8) as usize;
        r.read_exact(&mut b8)?;
        let dt = f64::from_le_bytes(b8);
        let mut increments = vec![0.0f64; steps * num_modes];
        for inc in increments.iter_mut() {
            r.read_exact(&mut b8)?;
            *inc = f64::from_le_bytes(b8);
        }
        Ok(Self {
            seed: seed_hint,
            dt,
            steps,
            num_modes,
            increments,
        })
    }
}
