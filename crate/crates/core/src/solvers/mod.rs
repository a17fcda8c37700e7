//! Splitting integrators for the kinetic equation and its diffusion limit,
//! sharing one time grid and one Wiener path.
//!
//! Kinetic step (Lie ordering, each substep exact for its own subproblem):
//!
//! 1. transport — per velocity node, multiply the spatial Fourier mode `k` by
//!    `exp(−2πi (a(v)·k) dt / eps)`; unconditionally stable, no CFL;
//! 2. relaxation — with the rate frozen at the substep start,
//!    `f ← ⟨f⟩ + (f − ⟨f⟩)·exp(−σ(⟨f⟩) dt / eps²)`; the velocity average is
//!    invariant inside the substep, so the stiffness never needs iteration;
//! 3. noise — geometric factor `f ← f·exp(Σ_k Qe_k Δβ_k)`, the exact
//!    Stratonovich flow of the noise subproblem; positivity preserving.
//!
//! Fluid step: an exponential solve of the diffusion with the coefficient
//! `σ(ρ_n)^{-1}⟨K⟩` frozen at the step start — the spatially constant part is
//! integrated exactly per mode, the varying part enters through a fixed-point
//! correction — followed by the same geometric noise factor, consuming the
//! same increments.
//!
//! Spatially and velocity-uniform states with the noise off are exact fixed
//! points of both solvers, and both conserve mass exactly (transport and
//! relaxation each preserve the total integral; the diffusion substep leaves
//! the zero mode untouched).

use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::Fft;

use crate::error::{Error, Result};
use crate::fields::spectral::{plan_fft, wavenumber};
use crate::fields::{PhaseField, ScalarField, TorusGrid};
use crate::model::{k_average, KMatrix, Model};
use crate::noise::{NoiseBasis, WienerPath};

/// Time-stepping parameters of one simulation cell.
#[derive(Debug, Clone, Copy)]
pub struct SchemeConfig {
    pub eps: f64,
    pub dt: f64,
    pub t_final: f64,
    /// Relative positivity floor: values below `−floor·sup|f|` count as
    /// violations (reported, never clipped).
    pub positivity_floor: f64,
    /// Sup-norm tolerance of the fluid fixed-point correction.
    pub fluid_solver_tol: f64,
}

impl SchemeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.eps <= 0.0 {
            return Err(Error::InvalidConfig(format!(
                "eps must be positive, got {}",
                self.eps
            )));
        }
        if self.dt <= 0.0 || self.t_final <= 0.0 {
            return Err(Error::InvalidConfig(
                "dt and t_final must be positive".into(),
            ));
        }
        let steps = self.t_final / self.dt;
        if (steps - steps.round()).abs() > 1e-9 * steps.max(1.0) {
            return Err(Error::InvalidConfig(format!(
                "t_final/dt = {steps} is not an integral number of steps"
            )));
        }
        if self.positivity_floor < 0.0 || self.fluid_solver_tol <= 0.0 {
            return Err(Error::InvalidConfig(
                "positivity floor must be >= 0 and fluid tolerance > 0".into(),
            ));
        }
        Ok(())
    }

    pub fn num_steps(&self) -> usize {
        (self.t_final / self.dt).round() as usize
    }
}

/// Kinetic state at one time.
#[derive(Debug, Clone)]
pub struct KineticState {
    pub t: f64,
    pub f: PhaseField,
}

/// Fluid state at one time.
#[derive(Debug, Clone)]
pub struct FluidState {
    pub t: f64,
    pub rho: ScalarField,
}

/// Uniformly sampled states of one run.
#[derive(Debug, Clone)]
pub struct Trajectory<T> {
    pub times: Vec<f64>,
    pub states: Vec<T>,
}

impl<T> Trajectory<T> {
    pub fn new() -> Self {
        Self {
            times: Vec::new(),
            states: Vec::new(),
        }
    }

    pub fn push(&mut self, t: f64, state: T) {
        self.times.push(t);
        self.states.push(state);
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (f64, &T)> {
        self.times.iter().copied().zip(self.states.iter())
    }
}

impl<T> Default for Trajectory<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Step indices (1-based, i.e. "after step n") at which to record samples:
/// `count` of them, as evenly spaced as the grid allows, always ending at the
/// final step.
pub fn sample_steps(steps: usize, count: usize) -> Vec<usize> {
    let count = count.clamp(1, steps);
    let mut out = Vec::with_capacity(count);
    for i in 1..=count {
        let idx = ((i * steps) as f64 / count as f64).round() as usize;
        let idx = idx.clamp(1, steps);
        if out.last() != Some(&idx) {
            out.push(idx);
        }
    }
    out
}

/// Running extrema and norms accumulated over every step of a run.
#[derive(Debug, Clone, Copy, Default, serde::Serialize)]
pub struct RunMonitor {
    /// sup over steps of `‖f‖²_{L²}`.
    pub sup_l2_sq: f64,
    /// Steps on which some value dropped below the relative positivity floor.
    pub positivity_violations: usize,
    /// Most negative value seen, relative to `sup|f|` at that step.
    pub worst_negative_rel: f64,
}

/// In-place spatial FFT sweep shared by both solvers; unnormalized in both
/// directions (callers fold `1/x_len` where needed).
struct XWorkspace {
    dim: usize,
    nx: usize,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
    line: Vec<Complex<f64>>,
    scratch: Vec<Complex<f64>>,
}

impl XWorkspace {
    fn new(grid: TorusGrid) -> Self {
        let fwd = plan_fft(grid.nx(), false);
        let inv = plan_fft(grid.nx(), true);
        let scratch_len = fwd
            .get_inplace_scratch_len()
            .max(inv.get_inplace_scratch_len());
        Self {
            dim: grid.dim(),
            nx: grid.nx(),
            fwd,
            inv,
            line: vec![Complex::new(0.0, 0.0); grid.nx()],
            scratch: vec![Complex::new(0.0, 0.0); scratch_len],
        }
    }

    fn sweep(&mut self, buf: &mut [Complex<f64>], inverse: bool) {
        let fft = if inverse { &self.inv } else { &self.fwd };
        let n = self.nx;
        let total = buf.len();
        for axis in 0..self.dim {
            let pre = n.pow(axis as u32);
            let post = total / (pre * n);
            for p in 0..pre {
                for q in 0..post {
                    let base = p * n * post + q;
                    if post == 1 {
                        fft.process_with_scratch(&mut buf[base..base + n], &mut self.scratch);
                    } else {
                        for (i, slot) in self.line.iter_mut().enumerate() {
                            *slot = buf[base + i * post];
                        }
                        fft.process_with_scratch(&mut self.line, &mut self.scratch);
                        for (i, slot) in self.line.iter().enumerate() {
                            buf[base + i * post] = *slot;
                        }
                    }
                }
            }
        }
    }
}

fn check_finite(values: &[f64], step: usize, t: f64, substep: &str) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::SolverAbort {
            step,
            time: t,
            detail: format!("non-finite values after {substep} substep"),
        })
    }
}

/// Kinetic splitting integrator bound to one `(model, basis, scheme)` cell.
pub struct KineticSolver<'a> {
    grid: TorusGrid,
    scheme: SchemeConfig,
    model: &'a Model,
    basis: &'a NoiseBasis,
    /// `exp(−2πi (a(v)·k) dt/eps) / x_len` per (velocity node, spatial mode).
    transport: Vec<Complex<f64>>,
    ws: XWorkspace,
    cplx: Vec<Complex<f64>>,
    mean: Vec<f64>,
    decay: Vec<f64>,
    amp: Vec<f64>,
}

impl<'a> KineticSolver<'a> {
    pub fn new(
        grid: TorusGrid,
        scheme: SchemeConfig,
        model: &'a Model,
        basis: &'a NoiseBasis,
    ) -> Result<Self> {
        scheme.validate()?;
        if model.velocity.grid() != grid || basis.grid() != grid {
            return Err(Error::GridMismatch(
                "kinetic solver: model/basis grids differ from solver grid".into(),
            ));
        }
        let (dim, nx, x_len, v_len) = (grid.dim(), grid.nx(), grid.x_len(), grid.v_len());
        let mut transport = Vec::with_capacity(v_len * x_len);
        let norm = 1.0 / x_len as f64;
        for v in 0..v_len {
            for lin in 0..x_len {
                let mut rem = lin;
                let mut dot = 0.0;
                for axis in (0..dim).rev() {
                    let k = wavenumber(nx, rem % nx) as f64;
                    rem /= nx;
                    dot += model.velocity.component(v, axis) * k;
                }
                let theta = 2.0 * std::f64::consts::PI * dot * scheme.dt / scheme.eps;
                transport.push(Complex::new(theta.cos(), -theta.sin()) * norm);
            }
        }
        Ok(Self {
            grid,
            scheme,
            model,
            basis,
            transport,
            ws: XWorkspace::new(grid),
            cplx: vec![Complex::new(0.0, 0.0); x_len],
            mean: vec![0.0; x_len],
            decay: vec![0.0; x_len],
            amp: vec![0.0; x_len],
        })
    }

    pub fn grid(&self) -> TorusGrid {
        self.grid
    }

    pub fn scheme(&self) -> SchemeConfig {
        self.scheme
    }

    /// Advance the raw state by one step, consuming the increments of
    /// `step_index` from the path.
    pub(crate) fn step_in_place(
        &mut self,
        values: &mut [f64],
        step_index: usize,
        path: &WienerPath,
    ) -> Result<()> {
        let t = step_index as f64 * self.scheme.dt;
        let x_len = self.grid.x_len();
        let v_len = self.grid.v_len();

        // transport, exact in Fourier space per velocity node
        for v in 0..v_len {
            let seg = &mut values[v * x_len..(v + 1) * x_len];
            for (c, &r) in self.cplx.iter_mut().zip(seg.iter()) {
                *c = Complex::new(r, 0.0);
            }
            self.ws.sweep(&mut self.cplx, false);
            for (c, m) in self
                .cplx
                .iter_mut()
                .zip(self.transport[v * x_len..(v + 1) * x_len].iter())
            {
                *c *= m;
            }
            self.ws.sweep(&mut self.cplx, true);
            for (r, c) in seg.iter_mut().zip(self.cplx.iter()) {
                *r = c.re;
            }
        }
        check_finite(values, step_index, t, "transport")?;

        // relaxation, exact with the rate frozen at the substep start
        self.mean.fill(0.0);
        for v in 0..v_len {
            for (m, &f) in self
                .mean
                .iter_mut()
                .zip(values[v * x_len..(v + 1) * x_len].iter())
            {
                *m += f;
            }
        }
        let w = 1.0 / v_len as f64;
        let stiff = -self.scheme.dt / (self.scheme.eps * self.scheme.eps);
        for (m, d) in self.mean.iter_mut().zip(self.decay.iter_mut()) {
            *m *= w;
            *d = (stiff * self.model.opacity.value(*m)).exp();
        }
        for v in 0..v_len {
            let seg = &mut values[v * x_len..(v + 1) * x_len];
            for ((f, &m), &d) in seg.iter_mut().zip(self.mean.iter()).zip(self.decay.iter()) {
                *f = m + (*f - m) * d;
            }
        }
        check_finite(values, step_index, t, "relaxation")?;

        // noise, the exact geometric (Stratonovich) factor
        if self.basis.num_modes() > 0 {
            self.basis
                .amplitude_field(path.increments_at(step_index), &mut self.amp);
            for a in self.amp.iter_mut() {
                *a = a.exp();
            }
            for v in 0..v_len {
                let seg = &mut values[v * x_len..(v + 1) * x_len];
                for (f, &a) in seg.iter_mut().zip(self.amp.iter()) {
                    *f *= a;
                }
            }
            check_finite(values, step_index, t, "noise")?;
        }
        Ok(())
    }

    /// One public step on immutable states.
    pub fn step(
        &mut self,
        state: &KineticState,
        path: &WienerPath,
        step_index: usize,
    ) -> Result<KineticState> {
        let mut values = state.f.values().to_vec();
        self.step_in_place(&mut values, step_index, path)?;
        Ok(KineticState {
            t: state.t + self.scheme.dt,
            f: PhaseField::from_values(self.grid, values)?,
        })
    }

    /// Run the full time grid, recording states after the listed steps and the
    /// uniform-bound monitor over every step.
    pub fn solve(
        &mut self,
        f0: &PhaseField,
        path: &WienerPath,
        record_after: &[usize],
    ) -> Result<(Trajectory<PhaseField>, RunMonitor)> {
        if f0.grid() != self.grid {
            return Err(Error::GridMismatch(
                "kinetic solve: initial data grid".into(),
            ));
        }
        let steps = self.scheme.num_steps();
        check_path(path, steps, self.basis)?;
        let mut values = f0.values().to_vec();
        let mut monitor = RunMonitor::default();
        update_monitor(&mut monitor, &values, self.scheme.positivity_floor);
        let mut traj = Trajectory::new();
        traj.push(0.0, f0.clone());
        let mut next_record = 0usize;
        for n in 0..steps {
            self.step_in_place(&mut values, n, path)?;
            update_monitor(&mut monitor, &values, self.scheme.positivity_floor);
            if next_record < record_after.len() && record_after[next_record] == n + 1 {
                traj.push(
                    (n + 1) as f64 * self.scheme.dt,
                    PhaseField::from_values(self.grid, values.clone())?,
                );
                next_record += 1;
            }
        }
        Ok((traj, monitor))
    }
}

fn update_monitor(monitor: &mut RunMonitor, values: &[f64], floor: f64) {
    let mut min = f64::INFINITY;
    let mut max_abs = 0.0f64;
    let mut sum_sq = 0.0f64;
    for &v in values {
        min = min.min(v);
        max_abs = max_abs.max(v.abs());
        sum_sq += v * v;
    }
    monitor.sup_l2_sq = monitor.sup_l2_sq.max(sum_sq / values.len() as f64);
    if max_abs > 0.0 && min < -floor * max_abs {
        monitor.positivity_violations += 1;
        monitor.worst_negative_rel = monitor.worst_negative_rel.min(min / max_abs);
    }
}

fn check_path(path: &WienerPath, steps: usize, basis: &NoiseBasis) -> Result<()> {
    if basis.num_modes() > 0 {
        if path.num_modes() != basis.num_modes() {
            return Err(Error::InvalidConfig(format!(
                "wiener path carries {} modes, basis has {}",
                path.num_modes(),
                basis.num_modes()
            )));
        }
        if path.steps() < steps {
            return Err(Error::InvalidConfig(format!(
                "wiener path covers {} steps, run needs {steps}",
                path.steps()
            )));
        }
    }
    Ok(())
}

/// Fluid splitting integrator for the limiting nonlinear diffusion.
pub struct FluidSolver<'a> {
    grid: TorusGrid,
    scheme: SchemeConfig,
    model: &'a Model,
    basis: &'a NoiseBasis,
    kmat: KMatrix,
    /// `4π² kᵀ⟨K⟩k` per spatial mode (unit diffusivity).
    lam: Vec<f64>,
    ws: XWorkspace,
    diffusivity: Vec<f64>,
    exp_fac: Vec<f64>,
    phi_fac: Vec<f64>,
    rho_hat: Vec<Complex<f64>>,
    u_hat: Vec<Complex<f64>>,
    work_hat: Vec<Complex<f64>>,
    div_hat: Vec<Complex<f64>>,
    grad: Vec<Vec<f64>>,
    flux: Vec<f64>,
    u: Vec<f64>,
    u_next: Vec<f64>,
    amp: Vec<f64>,
}

impl<'a> FluidSolver<'a> {
    pub fn new(
        grid: TorusGrid,
        scheme: SchemeConfig,
        model: &'a Model,
        basis: &'a NoiseBasis,
    ) -> Result<Self> {
        scheme.validate()?;
        if model.velocity.grid() != grid || basis.grid() != grid {
            return Err(Error::GridMismatch(
                "fluid solver: model/basis grids differ from solver grid".into(),
            ));
        }
        let kmat = k_average(&model.velocity)?;
        let (dim, nx, x_len) = (grid.dim(), grid.nx(), grid.x_len());
        let mut lam = Vec::with_capacity(x_len);
        let mut kvec = [0.0f64; 2];
        for lin in 0..x_len {
            let mut rem = lin;
            for axis in (0..dim).rev() {
                kvec[axis] = wavenumber(nx, rem % nx) as f64;
                rem /= nx;
            }
            let two_pi = 2.0 * std::f64::consts::PI;
            lam.push(two_pi * two_pi * kmat.quad_form(&kvec[..dim]));
        }
        Ok(Self {
            grid,
            scheme,
            model,
            basis,
            kmat,
            lam,
            ws: XWorkspace::new(grid),
            diffusivity: vec![0.0; x_len],
            exp_fac: vec![0.0; x_len],
            phi_fac: vec![0.0; x_len],
            rho_hat: vec![Complex::new(0.0, 0.0); x_len],
            u_hat: vec![Complex::new(0.0, 0.0); x_len],
            work_hat: vec![Complex::new(0.0, 0.0); x_len],
            div_hat: vec![Complex::new(0.0, 0.0); x_len],
            grad: (0..grid.dim()).map(|_| vec![0.0; x_len]).collect(),
            flux: vec![0.0; x_len],
            u: vec![0.0; x_len],
            u_next: vec![0.0; x_len],
            amp: vec![0.0; x_len],
        })
    }

    pub fn k_matrix(&self) -> &KMatrix {
        &self.kmat
    }

    /// Derivative of the spectrum `work_hat` along `axis` accumulated into
    /// `div_hat` (zeroing the Nyquist mode).
    fn accumulate_divergence(&mut self, axis: usize) {
        let nx = self.grid.nx();
        let total = self.grid.x_len();
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
                    let idx = p * nx * post + i * post + q;
                    self.div_hat[idx] += factor * self.work_hat[idx];
                }
            }
        }
    }

    pub(crate) fn step_in_place(
        &mut self,
        rho: &mut [f64],
        step_index: usize,
        path: &WienerPath,
    ) -> Result<()> {
        let t = step_index as f64 * self.scheme.dt;
        let x_len = self.grid.x_len();
        let dim = self.grid.dim();
        let dt = self.scheme.dt;

        // frozen diffusivity 1/σ(ρ_n), split into constant and varying parts
        let mut dmin = f64::INFINITY;
        let mut dmax = f64::NEG_INFINITY;
        for (d, &r) in self.diffusivity.iter_mut().zip(rho.iter()) {
            *d = 1.0 / self.model.opacity.value(r);
            dmin = dmin.min(*d);
            dmax = dmax.max(*d);
        }
        if !(dmin.is_finite() && dmax.is_finite() && dmin > 0.0) {
            return Err(Error::SolverAbort {
                step: step_index,
                time: t,
                detail: "diffusivity not positive and finite".into(),
            });
        }
        let dbar = 0.5 * (dmin + dmax);
        for d in self.diffusivity.iter_mut() {
            *d -= dbar;
        }

        // exact per-mode factors of the constant-coefficient part
        for ((e, p), &l) in self
            .exp_fac
            .iter_mut()
            .zip(self.phi_fac.iter_mut())
            .zip(self.lam.iter())
        {
            let lam_bar = dbar * l;
            if lam_bar == 0.0 {
                *e = 1.0;
                *p = dt;
            } else {
                *e = (-dt * lam_bar).exp();
                *p = (1.0 - *e) / lam_bar;
            }
        }

        let norm = 1.0 / x_len as f64;
        for (c, &r) in self.rho_hat.iter_mut().zip(rho.iter()) {
            *c = Complex::new(r * norm, 0.0);
        }
        self.ws.sweep(&mut self.rho_hat, false);

        // fixed-point correction for the spatially varying coefficient
        self.u.copy_from_slice(rho);
        let max_iters = 50;
        let mut converged = false;
        for _ in 0..max_iters {
            // div( (d(x) − dbar) ⟨K⟩ ∇u ) in spectral form
            for (c, &r) in self.work_hat.iter_mut().zip(self.u.iter()) {
                *c = Complex::new(r * norm, 0.0);
            }
            self.ws.sweep(&mut self.work_hat, false);
            self.u_hat.copy_from_slice(&self.work_hat);
            for axis in 0..dim {
                self.work_hat.copy_from_slice(&self.u_hat);
                differentiate_spectrum(&mut self.work_hat, self.grid, axis);
                self.ws.sweep(&mut self.work_hat, true);
                for (g, c) in self.grad[axis].iter_mut().zip(self.work_hat.iter()) {
                    *g = c.re;
                }
            }
            self.div_hat.fill(Complex::new(0.0, 0.0));
            for i in 0..dim {
                self.flux.fill(0.0);
                for j in 0..dim {
                    let kij = self.kmat.entry(i, j);
                    if kij == 0.0 {
                        continue;
                    }
                    for (slot, &g) in self.flux.iter_mut().zip(self.grad[j].iter()) {
                        *slot += kij * g;
                    }
                }
                for (slot, &d) in self.flux.iter_mut().zip(self.diffusivity.iter()) {
                    *slot *= d;
                }
                for (c, &w) in self.work_hat.iter_mut().zip(self.flux.iter()) {
                    *c = Complex::new(w * norm, 0.0);
                }
                self.ws.sweep(&mut self.work_hat, false);
                self.accumulate_divergence(i);
            }

            // u_next = exact constant-part flow + φ₁-weighted varying part
            for i in 0..x_len {
                self.work_hat[i] =
                    self.rho_hat[i] * self.exp_fac[i] + self.div_hat[i] * self.phi_fac[i];
            }
            self.ws.sweep(&mut self.work_hat, true);
            let mut diff = 0.0f64;
            for ((un, c), &u) in self
                .u_next
                .iter_mut()
                .zip(self.work_hat.iter())
                .zip(self.u.iter())
            {
                *un = c.re;
                diff = diff.max((*un - u).abs());
            }
            std::mem::swap(&mut self.u, &mut self.u_next);
            if diff <= self.scheme.fluid_solver_tol {
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(Error::FixedPoint {
                step: step_index,
                iters: max_iters,
            });
        }
        rho.copy_from_slice(&self.u);
        check_finite(rho, step_index, t, "diffusion")?;

        // noise, identical machinery to the kinetic solver
        if self.basis.num_modes() > 0 {
            self.basis
                .amplitude_field(path.increments_at(step_index), &mut self.amp);
            for a in self.amp.iter_mut() {
                *a = a.exp();
            }
            for (r, &a) in rho.iter_mut().zip(self.amp.iter()) {
                *r *= a;
            }
            check_finite(rho, step_index, t, "noise")?;
        }
        Ok(())
    }

    pub fn step(
        &mut self,
        state: &FluidState,
        path: &WienerPath,
        step_index: usize,
    ) -> Result<FluidState> {
        let mut values = state.rho.values().to_vec();
        self.step_in_place(&mut values, step_index, path)?;
        Ok(FluidState {
            t: state.t + self.scheme.dt,
            rho: ScalarField::from_values(self.grid, values)?,
        })
    }

    pub fn solve(
        &mut self,
        rho0: &ScalarField,
        path: &WienerPath,
        record_after: &[usize],
    ) -> Result<Trajectory<ScalarField>> {
        if rho0.grid() != self.grid {
            return Err(Error::GridMismatch("fluid solve: initial data grid".into()));
        }
        let steps = self.scheme.num_steps();
        check_path(path, steps, self.basis)?;
        let mut values = rho0.values().to_vec();
        let mut traj = Trajectory::new();
        traj.push(0.0, rho0.clone());
        let mut next_record = 0usize;
        for n in 0..steps {
            self.step_in_place(&mut values, n, path)?;
            if next_record < record_after.len() && record_after[next_record] == n + 1 {
                traj.push(
                    (n + 1) as f64 * self.scheme.dt,
                    ScalarField::from_values(self.grid, values.clone())?,
                );
                next_record += 1;
            }
        }
        Ok(traj)
    }
}

fn differentiate_spectrum(coeffs: &mut [Complex<f64>], grid: TorusGrid, axis: usize) {
    crate::fields::spectral::differentiate_block(coeffs, grid.dim(), grid.nx(), axis)
}

/// What a coupled run should retain beyond the error series.
#[derive(Debug, Clone, Copy, Default)]
pub struct CoupledOptions {
    pub store_kinetic: bool,
    /// Keep ρ at every step (needed by the third-corrector recursion).
    pub store_rho_every_step: bool,
}

/// Output of one coupled cell: both solvers on the same grid, time grid, and
/// Wiener path, with the pathwise L¹ distance at the sample times.
#[derive(Debug, Clone)]
pub struct CoupledRun {
    pub times: Vec<f64>,
    pub errors: Vec<f64>,
    pub kinetic: Option<Trajectory<PhaseField>>,
    pub fluid: Trajectory<ScalarField>,
    pub rho_every_step: Option<Trajectory<ScalarField>>,
    pub monitor: RunMonitor,
    /// Positivity/extrema monitor of the fluid iterates (every step).
    pub fluid_monitor: RunMonitor,
    /// Smoothness proxy: sup over sample times of `‖ρ‖²_{H²}`.
    pub fluid_sup_h2_sq: f64,
}

/// Advance both solvers in lockstep from the shared initial datum
/// (the kinetic field starts as the velocity-independent lift of `rho_in`).
pub fn coupled_run(
    grid: TorusGrid,
    scheme: SchemeConfig,
    model: &Model,
    basis: &NoiseBasis,
    path: &WienerPath,
    rho_in: &ScalarField,
    record_after: &[usize],
    opts: CoupledOptions,
) -> Result<CoupledRun> {
    if rho_in.grid() != grid {
        return Err(Error::GridMismatch("coupled run: initial data grid".into()));
    }
    let steps = scheme.num_steps();
    check_path(path, steps, basis)?;
    let mut kin = KineticSolver::new(grid, scheme, model, basis)?;
    let mut flu = FluidSolver::new(grid, scheme, model, basis)?;

    let x_len = grid.x_len();
    let v_len = grid.v_len();
    let mut f = Vec::with_capacity(x_len * v_len);
    for _ in 0..v_len {
        f.extend_from_slice(rho_in.values());
    }
    let mut rho = rho_in.values().to_vec();

    let mut times = vec![0.0];
    let mut errors = vec![0.0];
    let mut kinetic_traj = opts.store_kinetic.then(|| {
        let mut t = Trajectory::new();
        t.push(0.0, PhaseField::from_scalar(rho_in));
        t
    });
    let mut fluid_traj = Trajectory::new();
    fluid_traj.push(0.0, rho_in.clone());
    let mut rho_steps = opts.store_rho_every_step.then(|| {
        let mut t = Trajectory::new();
        t.push(0.0, rho_in.clone());
        t
    });
    let mut monitor = RunMonitor::default();
    update_monitor(&mut monitor, &f, scheme.positivity_floor);
    let mut fluid_monitor = RunMonitor::default();
    update_monitor(&mut fluid_monitor, &rho, scheme.positivity_floor);
    let mut fluid_sup_h2_sq = rho_in.hs_norm(2.0).powi(2);

    let mut next_record = 0usize;
    for n in 0..steps {
        kin.step_in_place(&mut f, n, path)?;
        flu.step_in_place(&mut rho, n, path)?;
        update_monitor(&mut monitor, &f, scheme.positivity_floor);
        update_monitor(&mut fluid_monitor, &rho, scheme.positivity_floor);
        let t = (n + 1) as f64 * scheme.dt;
        if let Some(traj) = rho_steps.as_mut() {
            traj.push(t, ScalarField::from_values(grid, rho.clone())?);
        }
        if next_record < record_after.len() && record_after[next_record] == n + 1 {
            let mut total = 0.0;
            for v in 0..v_len {
                for (fv, rv) in f[v * x_len..(v + 1) * x_len].iter().zip(rho.iter()) {
                    total += (fv - rv).abs();
                }
            }
            times.push(t);
            errors.push(total / (x_len * v_len) as f64);
            if let Some(traj) = kinetic_traj.as_mut() {
                traj.push(t, PhaseField::from_values(grid, f.clone())?);
            }
            let rho_field = ScalarField::from_values(grid, rho.clone())?;
            fluid_sup_h2_sq = fluid_sup_h2_sq.max(rho_field.hs_norm(2.0).powi(2));
            fluid_traj.push(t, rho_field);
            next_record += 1;
        }
    }

    Ok(CoupledRun {
        times,
        errors,
        kinetic: kinetic_traj,
        fluid: fluid_traj,
        rho_every_step: rho_steps,
        monitor,
        fluid_monitor,
        fluid_sup_h2_sq,
    })
}
