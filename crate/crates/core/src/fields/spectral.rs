//! Discrete Fourier calculus on the spatial torus.
//!
//! Coefficients use the convention `f(x_j) = Σ_k c_k exp(+2πi k·x_j)` with
//! nodes `x_j = j/n`, so Parseval reads `mean_j |f|² = Σ_k |c_k|²` and the
//! derivative along axis `a` multiplies `c_k` by `2πi k_a`. Wavenumbers are
//! `k = 0, 1, …, n/2, −n/2+1, …, −1`; the Nyquist mode is zeroed when
//! differentiating (its discrete derivative is not representable on the grid).

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use super::TorusGrid;
use crate::error::{Error, Result};

type Planned = Arc<dyn Fft<f64>>;

/// Cached FFT plan of the given length and direction.
pub(crate) fn plan_fft(n: usize, inverse: bool) -> Planned {
    static CACHE: OnceLock<Mutex<HashMap<(usize, bool), Planned>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let mut map = cache.lock().expect("fft plan cache poisoned");
    map.entry((n, inverse))
        .or_insert_with(|| {
            let mut planner = FftPlanner::new();
            if inverse {
                planner.plan_fft_inverse(n)
            } else {
                planner.plan_fft_forward(n)
            }
        })
        .clone()
}

/// Signed wavenumber for index `idx` on an `n`-point axis.
pub fn wavenumber(n: usize, idx: usize) -> i64 {
    if idx <= n / 2 {
        idx as i64
    } else {
        idx as i64 - n as i64
    }
}

/// In-place FFT of the middle axis of an array viewed as `[pre][n][post]`.
fn fft_axis(buf: &mut [Complex<f64>], pre: usize, n: usize, post: usize, fft: &Planned) {
    let mut line = vec![Complex::new(0.0, 0.0); n];
    let mut scratch = vec![Complex::new(0.0, 0.0); fft.get_inplace_scratch_len()];
    for p in 0..pre {
        for q in 0..post {
            let base = p * n * post + q;
            if post == 1 {
                fft.process_with_scratch(&mut buf[base..base + n], &mut scratch);
            } else {
                for (i, slot) in line.iter_mut().enumerate() {
                    *slot = buf[base + i * post];
                }
                fft.process_with_scratch(&mut line, &mut scratch);
                for (i, slot) in line.iter().enumerate() {
                    buf[base + i * post] = *slot;
                }
            }
        }
    }
}

/// Forward transform of one x-block (`nx^dim` reals) into normalized
/// coefficients laid out like the nodal data.
pub(crate) fn forward_block(values: &[f64], dim: usize, nx: usize) -> Vec<Complex<f64>> {
    let total = nx.pow(dim as u32);
    debug_assert_eq!(values.len(), total);
    let mut buf: Vec<Complex<f64>> = values.iter().map(|&v| Complex::new(v, 0.0)).collect();
    forward_block_inplace(&mut buf, dim, nx);
    buf
}

pub(crate) fn forward_block_inplace(buf: &mut [Complex<f64>], dim: usize, nx: usize) {
    let total = nx.pow(dim as u32);
    let fft = plan_fft(nx, false);
    for axis in 0..dim {
        let pre = nx.pow(axis as u32);
        let post = total / (pre * nx);
        fft_axis(buf, pre, nx, post, &fft);
    }
    let norm = 1.0 / total as f64;
    for c in buf.iter_mut() {
        *c *= norm;
    }
}

/// Inverse transform back to nodal values (real parts; the imaginary parts of
/// a Hermitian spectrum cancel to rounding).
pub(crate) fn inverse_block(coeffs: &[Complex<f64>], dim: usize, nx: usize) -> Vec<f64> {
    let mut buf = coeffs.to_vec();
    inverse_block_inplace(&mut buf, dim, nx);
    buf.iter().map(|c| c.re).collect()
}

pub(crate) fn inverse_block_inplace(buf: &mut [Complex<f64>], dim: usize, nx: usize) {
    let total = nx.pow(dim as u32);
    debug_assert_eq!(buf.len(), total);
    let fft = plan_fft(nx, true);
    for axis in 0..dim {
        let pre = nx.pow(axis as u32);
        let post = total / (pre * nx);
        fft_axis(buf, pre, nx, post, &fft);
    }
}

/// Multiply coefficients by `2πi k_axis`, zeroing the Nyquist mode.
pub(crate) fn differentiate_block(coeffs: &mut [Complex<f64>], dim: usize, nx: usize, axis: usize) {
    let total = nx.pow(dim as u32);
    debug_assert_eq!(coeffs.len(), total);
    let pre = nx.pow(axis as u32);
    let post = total / (pre * nx);
    for p in 0..pre {
        for i in 0..nx {
            let factor = if i == nx / 2 {
                Complex::new(0.0, 0.0)
            } else {
                Complex::new(0.0, 2.0 * std::f64::consts::PI * wavenumber(nx, i) as f64)
            };
            for q in 0..post {
                coeffs[p * nx * post + i * post + q] *= factor;
            }
        }
    }
}

/// Which kind of field a coefficient set was taken from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FieldKind {
    Scalar,
    /// One spectrum per velocity node, velocity-major like `PhaseField`.
    Phase,
}

/// Fourier coefficients of a scalar field, or of each velocity slice of a
/// phase-space field.
#[derive(Debug, Clone)]
pub struct SpectralCoeffs {
    pub(crate) grid: TorusGrid,
    pub(crate) kind: FieldKind,
    pub(crate) coeffs: Vec<Complex<f64>>,
}

impl SpectralCoeffs {
    pub fn grid(&self) -> TorusGrid {
        self.grid
    }

    pub fn kind(&self) -> FieldKind {
        self.kind
    }

    pub fn coeffs(&self) -> &[Complex<f64>] {
        &self.coeffs
    }

    /// Coefficient of wavevector `k` (per-axis signed integers) for the given
    /// velocity slice (`v_lin = 0` for scalar spectra).
    pub fn coeff_at(&self, k: &[i64], v_lin: usize) -> Result<Complex<f64>> {
        let nx = self.grid.nx();
        let dim = self.grid.dim();
        if k.len() != dim {
            return Err(Error::GridMismatch(format!(
                "wavevector has {} components, grid dimension is {dim}",
                k.len()
            )));
        }
        let mut lin = 0usize;
        for &ka in k {
            let half = (nx / 2) as i64;
            if ka > half || ka < -(half - 1) {
                return Err(Error::InvalidConfig(format!(
                    "wavenumber {ka} outside representable range for nx = {nx}"
                )));
            }
            let idx = if ka >= 0 {
                ka as usize
            } else {
                (ka + nx as i64) as usize
            };
            lin = lin * nx + idx;
        }
        let block = self.grid.x_len();
        Ok(self.coeffs[v_lin * block + lin])
    }

    /// Largest Hermitian-symmetry defect `|c(k) − conj(c(−k))|` over all modes.
    pub fn hermitian_defect(&self) -> f64 {
        let nx = self.grid.nx();
        let dim = self.grid.dim();
        let block = self.grid.x_len();
        let slices = self.coeffs.len() / block;
        let mut worst = 0.0f64;
        for s in 0..slices {
            for lin in 0..block {
                let mut rem = lin;
                let mut conj_lin = 0usize;
                let mut idxs = [0usize; 2];
                for a in (0..dim).rev() {
                    idxs[a] = rem % nx;
                    rem /= nx;
                }
                for &idx in idxs.iter().take(dim) {
                    let neg = if idx == 0 { 0 } else { nx - idx };
                    conj_lin = conj_lin * nx + neg;
                }
                let d = (self.coeffs[s * block + lin] - self.coeffs[s * block + conj_lin].conj())
                    .norm();
                worst = worst.max(d);
            }
        }
        worst
    }
}
