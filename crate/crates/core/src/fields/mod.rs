//! Torus grids and the fields living on them.
//!
//! The spatial domain is the unit torus `T^N` (N = 1 or 2) with unit total
//! mass, and the velocity domain is a second copy of `T^N` carrying the
//! normalized Lebesgue measure, so `⟨1⟩ = 1` and all norms are plain node
//! averages. Phase-space data is stored velocity-major: the x-block of each
//! velocity node is contiguous, which is what the spectral transport sweep
//! wants.
//!
//! The fractional Sobolev norm is only defined on [`ScalarField`]; requesting
//! it on phase-space data is unrepresentable by construction.

pub mod spectral;

pub use spectral::{FieldKind, SpectralCoeffs};

use crate::error::{Error, Result};
use serde::Serialize;
use spectral::{differentiate_block, forward_block, inverse_block};

/// Product grid `T^N_x × T^N_v` with per-axis resolutions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct TorusGrid {
    dim: usize,
    nx: usize,
    nv: usize,
}

impl TorusGrid {
    /// `dim` ∈ {1, 2}; `nx`, `nv` must be even and at least 4.
    pub fn new(dim: usize, nx: usize, nv: usize) -> Result<Self> {
        if !(dim == 1 || dim == 2) {
            return Err(Error::InvalidConfig(format!(
                "grid dimension must be 1 or 2, got {dim}"
            )));
        }
        for (name, n) in [("nx", nx), ("nv", nv)] {
            if n < 4 || n % 2 != 0 {
                return Err(Error::InvalidConfig(format!(
                    "{name} must be even and >= 4, got {n}"
                )));
            }
        }
        Ok(Self { dim, nx, nv })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn nv(&self) -> usize {
        self.nv
    }

    /// Number of spatial nodes, `nx^dim`.
    pub fn x_len(&self) -> usize {
        self.nx.pow(self.dim as u32)
    }

    /// Number of velocity nodes, `nv^dim`.
    pub fn v_len(&self) -> usize {
        self.nv.pow(self.dim as u32)
    }

    /// Coordinates of spatial node `lin` (row-major, axis 0 slowest); only the
    /// first `dim` entries of the returned buffer are meaningful.
    pub fn x_coord(&self, lin: usize) -> [f64; 2] {
        Self::coord(self.nx, self.dim, lin)
    }

    pub fn v_coord(&self, lin: usize) -> [f64; 2] {
        Self::coord(self.nv, self.dim, lin)
    }

    fn coord(n: usize, dim: usize, lin: usize) -> [f64; 2] {
        let mut out = [0.0; 2];
        let mut rem = lin;
        for a in (0..dim).rev() {
            out[a] = (rem % n) as f64 / n as f64;
            rem /= n;
        }
        out
    }
}

fn ensure_finite(values: &[f64], context: &str) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(context.to_string()))
    }
}

/// Real-valued function on the spatial torus grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    grid: TorusGrid,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn constant(grid: TorusGrid, c: f64) -> Self {
        Self {
            grid,
            values: vec![c; grid.x_len()],
        }
    }

    pub fn zeros(grid: TorusGrid) -> Self {
        Self::constant(grid, 0.0)
    }

    pub fn from_fn(grid: TorusGrid, f: impl Fn(&[f64]) -> f64) -> Self {
        let dim = grid.dim();
        let values = (0..grid.x_len())
            .map(|lin| f(&grid.x_coord(lin)[..dim]))
            .collect();
        Self { grid, values }
    }

    pub fn from_values(grid: TorusGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.x_len() {
            return Err(Error::GridMismatch(format!(
                "scalar field needs {} values, got {}",
                grid.x_len(),
                values.len()
            )));
        }
        ensure_finite(&values, "scalar field construction")?;
        Ok(Self { grid, values })
    }

    pub fn grid(&self) -> TorusGrid {
        self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn l1_norm(&self) -> f64 {
        self.values.iter().map(|v| v.abs()).sum::<f64>() / self.values.len() as f64
    }

    pub fn l2_norm(&self) -> f64 {
        (self.values.iter().map(|v| v * v).sum::<f64>() / self.values.len() as f64).sqrt()
    }

    pub fn linf_norm(&self) -> f64 {
        self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// Fractional Sobolev norm of order `s`: zero mode plus the homogeneous
    /// `|k|^{2s}`-weighted coefficient sum.
    pub fn hs_norm(&self, s: f64) -> f64 {
        let spec = self.to_spectral();
        let nx = self.grid.nx();
        let dim = self.grid.dim();
        let mut total = 0.0;
        for (lin, c) in spec.coeffs().iter().enumerate() {
            let mut rem = lin;
            let mut k_sq = 0.0f64;
            for _ in 0..dim {
                let k = spectral::wavenumber(nx, rem % nx) as f64;
                k_sq += k * k;
                rem /= nx;
            }
            let weight = if k_sq == 0.0 { 1.0 } else { k_sq.powf(s) };
            total += weight * c.norm_sqr();
        }
        total.sqrt()
    }

    pub fn to_spectral(&self) -> SpectralCoeffs {
        SpectralCoeffs {
            grid: self.grid,
            kind: FieldKind::Scalar,
            coeffs: forward_block(&self.values, self.grid.dim(), self.grid.nx()),
        }
    }

    /// Spectral gradient, one field per spatial axis; exact for band-limited
    /// data.
    pub fn gradient(&self) -> Vec<ScalarField> {
        let dim = self.grid.dim();
        let nx = self.grid.nx();
        let base = forward_block(&self.values, dim, nx);
        (0..dim)
            .map(|axis| {
                let mut coeffs = base.clone();
                differentiate_block(&mut coeffs, dim, nx, axis);
                ScalarField {
                    grid: self.grid,
                    values: inverse_block(&coeffs, dim, nx),
                }
            })
            .collect()
    }

    /// Pointwise combination with another field on the same grid.
    pub fn zip_with(
        &self,
        other: &ScalarField,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<ScalarField> {
        if self.grid != other.grid {
            return Err(Error::GridMismatch(
                "scalar fields on different grids".into(),
            ));
        }
        let values = self
            .values
            .iter()
            .zip(other.values.iter())
            .map(|(&a, &b)| f(a, b))
            .collect();
        Ok(ScalarField {
            grid: self.grid,
            values,
        })
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> ScalarField {
        ScalarField {
            grid: self.grid,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }
}

impl SpectralCoeffs {
    /// Inverse transform of a scalar spectrum.
    pub fn to_scalar(&self) -> Result<ScalarField> {
        if self.kind != FieldKind::Scalar {
            return Err(Error::GridMismatch(
                "phase-space spectrum cannot produce a scalar field".into(),
            ));
        }
        ScalarField::from_values(
            self.grid,
            inverse_block(&self.coeffs, self.grid.dim(), self.grid.nx()),
        )
    }

    /// Inverse transform of a phase-space spectrum.
    pub fn to_phase(&self) -> Result<PhaseField> {
        if self.kind != FieldKind::Phase {
            return Err(Error::GridMismatch(
                "scalar spectrum cannot produce a phase-space field".into(),
            ));
        }
        let (dim, nx, block) = (self.grid.dim(), self.grid.nx(), self.grid.x_len());
        let mut values = Vec::with_capacity(self.coeffs.len());
        for v in 0..self.grid.v_len() {
            values.extend(inverse_block(
                &self.coeffs[v * block..(v + 1) * block],
                dim,
                nx,
            ));
        }
        PhaseField::from_values(self.grid, values)
    }
}

/// Real-valued function on the phase-space grid, stored velocity-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseField {
    grid: TorusGrid,
    values: Vec<f64>,
}

impl PhaseField {
    pub fn constant(grid: TorusGrid, c: f64) -> Self {
        Self {
            grid,
            values: vec![c; grid.x_len() * grid.v_len()],
        }
    }

    pub fn zeros(grid: TorusGrid) -> Self {
        Self::constant(grid, 0.0)
    }

    pub fn from_fn(grid: TorusGrid, f: impl Fn(&[f64], &[f64]) -> f64) -> Self {
        let dim = grid.dim();
        let (x_len, v_len) = (grid.x_len(), grid.v_len());
        let mut values = Vec::with_capacity(x_len * v_len);
        for v_lin in 0..v_len {
            let v = grid.v_coord(v_lin);
            for x_lin in 0..x_len {
                let x = grid.x_coord(x_lin);
                values.push(f(&x[..dim], &v[..dim]));
            }
        }
        Self { grid, values }
    }

    /// Lift a spatial field to phase space (independent of velocity).
    pub fn from_scalar(rho: &ScalarField) -> Self {
        let grid = rho.grid();
        let mut values = Vec::with_capacity(grid.x_len() * grid.v_len());
        for _ in 0..grid.v_len() {
            values.extend_from_slice(rho.values());
        }
        Self { grid, values }
    }

    pub fn from_values(grid: TorusGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.x_len() * grid.v_len() {
            return Err(Error::GridMismatch(format!(
                "phase field needs {} values, got {}",
                grid.x_len() * grid.v_len(),
                values.len()
            )));
        }
        ensure_finite(&values, "phase field construction")?;
        Ok(Self { grid, values })
    }

    pub fn grid(&self) -> TorusGrid {
        self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Contiguous x-block of one velocity node.
    pub fn x_block(&self, v_lin: usize) -> &[f64] {
        let block = self.grid.x_len();
        &self.values[v_lin * block..(v_lin + 1) * block]
    }

    /// `⟨f⟩(x)`, the velocity average with normalized weights.
    pub fn velocity_average(&self) -> ScalarField {
        let block = self.grid.x_len();
        let v_len = self.grid.v_len();
        let mut acc = vec![0.0f64; block];
        for v in 0..v_len {
            let slice = &self.values[v * block..(v + 1) * block];
            for (a, &s) in acc.iter_mut().zip(slice.iter()) {
                *a += s;
            }
        }
        let w = 1.0 / v_len as f64;
        for a in acc.iter_mut() {
            *a *= w;
        }
        ScalarField {
            grid: self.grid,
            values: acc,
        }
    }

    pub fn l1_norm(&self) -> f64 {
        self.values.iter().map(|v| v.abs()).sum::<f64>() / self.values.len() as f64
    }

    pub fn l2_norm(&self) -> f64 {
        (self.values.iter().map(|v| v * v).sum::<f64>() / self.values.len() as f64).sqrt()
    }

    pub fn linf_norm(&self) -> f64 {
        self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// `‖f − ρ‖_{L¹(x,v)}` against a lifted spatial field, without allocating
    /// the lift.
    pub fn l1_distance_to_scalar(&self, rho: &ScalarField) -> Result<f64> {
        if self.grid != rho.grid() {
            return Err(Error::GridMismatch(
                "phase/scalar fields on different grids".into(),
            ));
        }
        let block = self.grid.x_len();
        let mut total = 0.0;
        for v in 0..self.grid.v_len() {
            let slice = &self.values[v * block..(v + 1) * block];
            for (f, r) in slice.iter().zip(rho.values().iter()) {
                total += (f - r).abs();
            }
        }
        Ok(total / self.values.len() as f64)
    }

    pub fn to_spectral(&self) -> SpectralCoeffs {
        let (dim, nx, block) = (self.grid.dim(), self.grid.nx(), self.grid.x_len());
        let mut coeffs = Vec::with_capacity(self.values.len());
        for v in 0..self.grid.v_len() {
            coeffs.extend(forward_block(
                &self.values[v * block..(v + 1) * block],
                dim,
                nx,
            ));
        }
        SpectralCoeffs {
            grid: self.grid,
            kind: FieldKind::Phase,
            coeffs,
        }
    }

    /// Spatial spectral gradient applied slice-by-slice in velocity.
    pub fn gradient_x(&self) -> Vec<PhaseField> {
        let (dim, nx, block) = (self.grid.dim(), self.grid.nx(), self.grid.x_len());
        let mut out: Vec<PhaseField> = (0..dim)
            .map(|_| PhaseField {
                grid: self.grid,
                values: Vec::with_capacity(self.values.len()),
            })
            .collect();
        for v in 0..self.grid.v_len() {
            let base = forward_block(&self.values[v * block..(v + 1) * block], dim, nx);
            for (axis, field) in out.iter_mut().enumerate() {
                let mut coeffs = base.clone();
                differentiate_block(&mut coeffs, dim, nx, axis);
                field.values.extend(inverse_block(&coeffs, dim, nx));
            }
        }
        out
    }

    pub fn zip_with(&self, other: &PhaseField, f: impl Fn(f64, f64) -> f64) -> Result<PhaseField> {
        if self.grid != other.grid {
            return Err(Error::GridMismatch(
                "phase fields on different grids".into(),
            ));
        }
        let values = self
            .values
            .iter()
            .zip(other.values.iter())
            .map(|(&a, &b)| f(a, b))
            .collect();
        Ok(PhaseField {
            grid: self.grid,
            values,
        })
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> PhaseField {
        PhaseField {
            grid: self.grid,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub(crate) fn from_raw(grid: TorusGrid, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), grid.x_len() * grid.v_len());
        Self { grid, values }
    }
}

impl ScalarField {
    pub(crate) fn from_raw(grid: TorusGrid, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), grid.x_len());
        Self { grid, values }
    }
}
