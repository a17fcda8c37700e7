//! Velocity field, opacity, relaxation operator, and the standing-hypothesis
//! validators.
//!
//! Every configuration is certified before simulation: null flux of `a`,
//! positive definiteness of `⟨a ⊗ a⟩`, the opacity bounds and Lipschitz
//! constant, the two monotonicity conditions, and the sub-level-set
//! non-degeneracy of `a` that the averaging estimates rest on.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::fields::{PhaseField, ScalarField, TorusGrid};
use crate::stats;

/// Closed-form velocity map families.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum VelocityModel {
    /// `a(v) = sin(2πv_i)` per axis; zero flux, `⟨a⊗a⟩ = I/2`.
    Sine,
    /// Constant map; violates null flux unless zero, degenerate either way.
    Constant(f64),
}

/// Velocity field `a : V → R^N` with tabulated nodal values.
#[derive(Debug, Clone)]
pub struct VelocityField {
    grid: TorusGrid,
    model: VelocityModel,
    /// `values[v_lin * dim + axis]`
    values: Vec<f64>,
    sup: f64,
    c1_bounded: bool,
}

impl VelocityField {
    pub fn new(grid: TorusGrid, model: VelocityModel) -> Self {
        let dim = grid.dim();
        let mut values = Vec::with_capacity(grid.v_len() * dim);
        let mut sup = 0.0f64;
        let mut buf = [0.0f64; 2];
        for v_lin in 0..grid.v_len() {
            let v = grid.v_coord(v_lin);
            model.eval(&v[..dim], &mut buf[..dim]);
            for &b in &buf[..dim] {
                sup = sup.max(b.abs());
                values.push(b);
            }
        }
        Self {
            grid,
            model,
            values,
            sup,
            c1_bounded: true,
        }
    }

    pub fn grid(&self) -> TorusGrid {
        self.grid
    }

    pub fn model(&self) -> VelocityModel {
        self.model
    }

    pub fn eval(&self, v: &[f64], out: &mut [f64]) {
        self.model.eval(v, out)
    }

    /// Tabulated component `a_axis(v)` at velocity node `v_lin`.
    pub fn component(&self, v_lin: usize, axis: usize) -> f64 {
        self.values[v_lin * self.grid.dim() + axis]
    }

    pub fn sup_norm(&self) -> f64 {
        self.sup
    }

    pub fn c1_bounded(&self) -> bool {
        self.c1_bounded
    }

    /// `∫_V a dv` under the grid quadrature, per component.
    pub fn flux(&self) -> Vec<f64> {
        let dim = self.grid.dim();
        let mut flux = vec![0.0f64; dim];
        for v_lin in 0..self.grid.v_len() {
            for (axis, f) in flux.iter_mut().enumerate() {
                *f += self.component(v_lin, axis);
            }
        }
        for f in flux.iter_mut() {
            *f /= self.grid.v_len() as f64;
        }
        flux
    }
}

impl VelocityModel {
    pub fn eval(&self, v: &[f64], out: &mut [f64]) {
        match *self {
            VelocityModel::Sine => {
                for (o, &vi) in out.iter_mut().zip(v.iter()) {
                    *o = (2.0 * std::f64::consts::PI * vi).sin();
                }
            }
            VelocityModel::Constant(c) => out.fill(c),
        }
    }
}

/// Opacity families with analytic derivatives up to order three.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OpacityModel {
    Constant(f64),
    /// `σ(x) = lo + (hi − lo) / (1 + e^{βx})`: smooth, bounded, nonincreasing.
    Logistic {
        lo: f64,
        hi: f64,
        beta: f64,
    },
    /// `σ(x) = e^{−x}`: deliberately violates the boundedness hypothesis.
    ExpDecay,
}

/// Opacity `σ` together with its declared bounds and Lipschitz constant.
#[derive(Debug, Clone, Copy)]
pub struct Opacity {
    model: OpacityModel,
    sigma_star: f64,
    sigma_upper: f64,
    lip: f64,
}

impl Opacity {
    pub fn constant(sigma0: f64) -> Result<Self> {
        if sigma0 <= 0.0 {
            return Err(Error::InvalidConfig(format!(
                "constant opacity must be positive, got {sigma0}"
            )));
        }
        Ok(Self {
            model: OpacityModel::Constant(sigma0),
            sigma_star: sigma0,
            sigma_upper: sigma0,
            lip: 0.0,
        })
    }

    pub fn logistic(lo: f64, hi: f64, beta: f64) -> Result<Self> {
        if lo <= 0.0 || hi <= lo || beta <= 0.0 {
            return Err(Error::InvalidConfig(format!(
                "logistic opacity needs 0 < lo < hi and beta > 0, got ({lo}, {hi}, {beta})"
            )));
        }
        Ok(Self {
            model: OpacityModel::Logistic { lo, hi, beta },
            sigma_star: lo,
            sigma_upper: hi,
            // |σ'| peaks at x = 0 where the sigmoid factor s(1−s) is 1/4.
            lip: (hi - lo) * beta / 4.0,
        })
    }

    /// Unbounded-above family used to exercise the validator's rejection path.
    pub fn exp_decay() -> Self {
        Self {
            model: OpacityModel::ExpDecay,
            sigma_star: 1e-6,
            sigma_upper: 1.0,
            lip: 1.0,
        }
    }

    pub fn model(&self) -> OpacityModel {
        self.model
    }

    pub fn sigma_star(&self) -> f64 {
        self.sigma_star
    }

    pub fn sigma_upper(&self) -> f64 {
        self.sigma_upper
    }

    pub fn lip(&self) -> f64 {
        self.lip
    }

    pub fn value(&self, x: f64) -> f64 {
        match self.model {
            OpacityModel::Constant(s) => s,
            OpacityModel::Logistic { lo, hi, beta } => lo + (hi - lo) * sigmoid(-beta * x),
            OpacityModel::ExpDecay => (-x).exp(),
        }
    }

    pub fn d1(&self, x: f64) -> f64 {
        match self.model {
            OpacityModel::Constant(_) => 0.0,
            OpacityModel::Logistic { lo, hi, beta } => {
                let s = sigmoid(-beta * x);
                -(hi - lo) * beta * s * (1.0 - s)
            }
            OpacityModel::ExpDecay => -(-x).exp(),
        }
    }

    pub fn d2(&self, x: f64) -> f64 {
        match self.model {
            OpacityModel::Constant(_) => 0.0,
            OpacityModel::Logistic { lo, hi, beta } => {
                let s = sigmoid(-beta * x);
                (hi - lo) * beta * beta * s * (1.0 - s) * (1.0 - 2.0 * s)
            }
            OpacityModel::ExpDecay => (-x).exp(),
        }
    }

    pub fn d3(&self, x: f64) -> f64 {
        match self.model {
            OpacityModel::Constant(_) => 0.0,
            OpacityModel::Logistic { lo, hi, beta } => {
                let s = sigmoid(-beta * x);
                -(hi - lo) * beta.powi(3) * s * (1.0 - s) * (1.0 - 6.0 * s + 6.0 * s * s)
            }
            OpacityModel::ExpDecay => -(-x).exp(),
        }
    }
}

fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// The model pair every solver run is parameterized by.
#[derive(Debug, Clone)]
pub struct Model {
    pub velocity: VelocityField,
    pub opacity: Opacity,
}

/// Relaxation operator `L(f) = ⟨f⟩ − f`.
pub fn relaxation(f: &PhaseField) -> PhaseField {
    let avg = f.velocity_average();
    let grid = f.grid();
    let block = grid.x_len();
    let mut values = Vec::with_capacity(f.values().len());
    for v in 0..grid.v_len() {
        for (fv, av) in f.x_block(v).iter().zip(avg.values().iter()) {
            values.push(av - fv);
        }
    }
    debug_assert_eq!(values.len(), block * grid.v_len());
    PhaseField::from_raw(grid, values)
}

/// Weighted relaxation `σ(⟨f⟩)(⟨f⟩ − f)`, the source term of the kinetic
/// equation.
pub fn weighted_relaxation(f: &PhaseField, opacity: &Opacity) -> PhaseField {
    let avg = f.velocity_average();
    let grid = f.grid();
    let rates: Vec<f64> = avg.values().iter().map(|&r| opacity.value(r)).collect();
    let mut values = Vec::with_capacity(f.values().len());
    for v in 0..grid.v_len() {
        for ((fv, av), rate) in f
            .x_block(v)
            .iter()
            .zip(avg.values().iter())
            .zip(rates.iter())
        {
            values.push(rate * (av - fv));
        }
    }
    PhaseField::from_raw(grid, values)
}

/// Both sides of the L² dissipativity identity: the inner product
/// `(σ(⟨f⟩)Lf, f)` and `−‖σ(⟨f⟩)^{1/2} Lf‖²`. They agree exactly under the
/// shared quadrature and are nonpositive.
pub fn dissipativity_pair(f: &PhaseField, opacity: &Opacity) -> (f64, f64) {
    let avg = f.velocity_average();
    let grid = f.grid();
    let rates: Vec<f64> = avg.values().iter().map(|&r| opacity.value(r)).collect();
    let mut lhs = 0.0;
    let mut rhs = 0.0;
    for v in 0..grid.v_len() {
        for ((fv, av), rate) in f
            .x_block(v)
            .iter()
            .zip(avg.values().iter())
            .zip(rates.iter())
        {
            let lf = av - fv;
            lhs += rate * lf * fv;
            rhs -= rate * lf * lf;
        }
    }
    let total = (grid.x_len() * grid.v_len()) as f64;
    (lhs / total, rhs / total)
}

/// Transport operator application `a(v)·∇x f`.
pub fn advect(f: &PhaseField, a: &VelocityField) -> Result<PhaseField> {
    if f.grid() != a.grid() {
        return Err(Error::GridMismatch(
            "advect: field/velocity grids differ".into(),
        ));
    }
    let grid = f.grid();
    let grads = f.gradient_x();
    let block = grid.x_len();
    let mut values = vec![0.0f64; f.values().len()];
    for v in 0..grid.v_len() {
        for (axis, grad) in grads.iter().enumerate() {
            let av = a.component(v, axis);
            let out = &mut values[v * block..(v + 1) * block];
            for (o, &g) in out.iter_mut().zip(grad.x_block(v).iter()) {
                *o += av * g;
            }
        }
    }
    Ok(PhaseField::from_raw(grid, values))
}

/// Transport applied to a lifted spatial field, `a(v)·∇x ρ`.
pub fn advect_scalar(rho: &ScalarField, a: &VelocityField) -> Result<PhaseField> {
    if rho.grid() != a.grid() {
        return Err(Error::GridMismatch(
            "advect_scalar: field/velocity grids differ".into(),
        ));
    }
    let grid = rho.grid();
    let grads = rho.gradient();
    let block = grid.x_len();
    let mut values = Vec::with_capacity(block * grid.v_len());
    for v in 0..grid.v_len() {
        for x in 0..block {
            let mut acc = 0.0;
            for (axis, grad) in grads.iter().enumerate() {
                acc += a.component(v, axis) * grad.values()[x];
            }
            values.push(acc);
        }
    }
    Ok(PhaseField::from_raw(grid, values))
}

/// Velocity average of `a ⊗ a` with its symmetry defect and least eigenvalue.
#[derive(Debug, Clone, Serialize)]
pub struct KMatrix {
    pub dim: usize,
    /// Row-major `dim × dim` entries.
    pub entries: Vec<f64>,
    pub min_eigenvalue: f64,
}

impl KMatrix {
    pub fn entry(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.dim + j]
    }

    /// Quadratic form `kᵀ ⟨K⟩ k`.
    pub fn quad_form(&self, k: &[f64]) -> f64 {
        let mut acc = 0.0;
        for i in 0..self.dim {
            for j in 0..self.dim {
                acc += k[i] * self.entry(i, j) * k[j];
            }
        }
        acc
    }
}

/// `⟨a ⊗ a⟩` via velocity quadrature; rejects configurations whose average is
/// not positive definite.
pub fn k_average(a: &VelocityField) -> Result<KMatrix> {
    let dim = a.grid().dim();
    let v_len = a.grid().v_len();
    let mut entries = vec![0.0f64; dim * dim];
    for v in 0..v_len {
        for i in 0..dim {
            for j in 0..dim {
                entries[i * dim + j] += a.component(v, i) * a.component(v, j);
            }
        }
    }
    for e in entries.iter_mut() {
        *e /= v_len as f64;
    }
    let min_eigenvalue = match dim {
        1 => entries[0],
        2 => {
            let (p, q, r) = (entries[0], entries[1], entries[3]);
            let tr = p + r;
            let disc = ((p - r).powi(2) + 4.0 * q * q).sqrt();
            (tr - disc) / 2.0
        }
        _ => unreachable!("grid dimension is validated to 1 or 2"),
    };
    if min_eigenvalue <= 1e-12 {
        return Err(Error::Validation(format!(
            "velocity second moment ⟨a⊗a⟩ is not positive definite (min eigenvalue {min_eigenvalue:.3e})"
        )));
    }
    Ok(KMatrix {
        dim,
        entries,
        min_eigenvalue,
    })
}

/// Result of the sub-level-set scan quantifying how rarely characteristics
/// resonate: the worst normalized measure of `{v : |a(v)·ξ + s| < ε}` per ε,
/// and the fitted decay exponent.
#[derive(Debug, Clone, Serialize)]
pub struct DegeneracyScan {
    pub eps_ladder: Vec<f64>,
    pub worst_measures: Vec<f64>,
    /// Worst `(ξ, s)` pair per ladder entry.
    pub worst_cases: Vec<(Vec<f64>, f64)>,
    pub alpha_hat: f64,
    pub degenerate: bool,
}

/// Normalized measure of `{v : |a(v)·ξ + offset| < eps}` by counting on a
/// fine velocity grid.
pub fn sublevel_measure(
    a: &VelocityField,
    xi: &[f64],
    offset: f64,
    eps: f64,
    fine_per_axis: usize,
) -> f64 {
    let dim = a.grid().dim();
    let fine_total = fine_per_axis.pow(dim as u32);
    let mut buf = [0.0f64; 2];
    let mut av = [0.0f64; 2];
    let mut count = 0usize;
    for lin in 0..fine_total {
        let mut rem = lin;
        for axis in (0..dim).rev() {
            buf[axis] = (rem % fine_per_axis) as f64 / fine_per_axis as f64;
            rem /= fine_per_axis;
        }
        a.eval(&buf[..dim], &mut av[..dim]);
        let mut dot = 0.0;
        for axis in 0..dim {
            dot += av[axis] * xi[axis];
        }
        if (dot + offset).abs() < eps {
            count += 1;
        }
    }
    count as f64 / fine_total as f64
}

/// Scan directions `ξ ∈ S^{N-1}` and offsets `s ∈ [−sup|a|−1, sup|a|+1]`
/// (a uniform grid of `offset_samples` points, completed by the exact extrema
/// of `a·ξ` and their eps-shifted neighbours, where two-sided windows are
/// largest), measuring each sub-level set by counting on a fine velocity
/// grid.
pub fn degeneracy_scan(
    a: &VelocityField,
    eps_ladder: &[f64],
    offset_samples: usize,
    fine_per_axis: usize,
) -> Result<DegeneracyScan> {
    if eps_ladder.is_empty() || eps_ladder.iter().any(|&e| e <= 0.0 || e >= 1.0) {
        return Err(Error::InvalidConfig(
            "degeneracy scan needs a ladder inside (0, 1)".into(),
        ));
    }
    if eps_ladder.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::InvalidConfig(
            "degeneracy ladder must be strictly decreasing".into(),
        ));
    }
    let dim = a.grid().dim();
    let directions: Vec<Vec<f64>> = match dim {
        1 => vec![vec![1.0], vec![-1.0]],
        _ => (0..offset_samples.max(8))
            .map(|i| {
                let th = 2.0 * std::f64::consts::PI * i as f64 / offset_samples.max(8) as f64;
                vec![th.cos(), th.sin()]
            })
            .collect(),
    };
    let fine_total = fine_per_axis.pow(dim as u32);
    let half = a.sup_norm() + 1.0;

    let mut worst_measures = vec![0.0f64; eps_ladder.len()];
    let mut worst_cases: Vec<(Vec<f64>, f64)> = vec![(vec![0.0; dim], 0.0); eps_ladder.len()];
    let mut buf = [0.0f64; 2];
    let mut proj = vec![0.0f64; fine_total];
    for xi in &directions {
        // a·ξ tabulated once per direction on the fine grid
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for (lin, p) in proj.iter_mut().enumerate() {
            let mut rem = lin;
            let mut dot = 0.0;
            for axis in (0..dim).rev() {
                let v = (rem % fine_per_axis) as f64 / fine_per_axis as f64;
                rem /= fine_per_axis;
                buf[axis] = v;
            }
            let mut av = [0.0f64; 2];
            a.eval(&buf[..dim], &mut av[..dim]);
            for axis in 0..dim {
                dot += av[axis] * xi[axis];
            }
            *p = dot;
            lo = lo.min(dot);
            hi = hi.max(dot);
        }
        let mut offsets: Vec<f64> = (0..offset_samples)
            .map(|i| {
                -half + 2.0 * half * i as f64 / (offset_samples.saturating_sub(1).max(1)) as f64
            })
            .collect();
        // The measure peaks where the window edge grazes a degenerate
        // critical value of a·ξ; include those offsets exactly, both centered
        // and eps-shifted (two-sided windows are widest one eps inside).
        offsets.push(-lo);
        offsets.push(-hi);
        for &eps in eps_ladder {
            offsets.push(-hi + eps);
            offsets.push(-lo - eps);
        }
        for &s in &offsets {
            let mut counts = vec![0usize; eps_ladder.len()];
            for &p in &proj {
                let d = (p + s).abs();
                for (ei, &eps) in eps_ladder.iter().enumerate() {
                    if d < eps {
                        counts[ei] += 1;
                    }
                }
            }
            for (ei, &c) in counts.iter().enumerate() {
                let m = c as f64 / fine_total as f64;
                if m > worst_measures[ei] {
                    worst_measures[ei] = m;
                    worst_cases[ei] = (xi.clone(), s);
                }
            }
        }
    }

    let degenerate_floor = 1.0 / fine_total as f64;
    let fit = stats::fit_log_log(eps_ladder, &worst_measures);
    let (alpha_hat, degenerate) = match fit {
        Some(f) => {
            let flat = worst_measures.last().copied().unwrap_or(0.0) > 0.9;
            (f.slope, f.slope < 0.1 || flat)
        }
        // zero counts anywhere in the ladder: either genuinely degenerate or
        // below grid resolution; report conservatively
        None => (0.0, worst_measures.iter().any(|&m| m <= degenerate_floor)),
    };
    Ok(DegeneracyScan {
        eps_ladder: eps_ladder.to_vec(),
        worst_measures,
        worst_cases,
        alpha_hat,
        degenerate,
    })
}

/// Outcome of a single hypothesis check with its failure witness.
#[derive(Debug, Clone, Serialize)]
pub struct CheckOutcome {
    pub pass: bool,
    pub detail: String,
}

impl CheckOutcome {
    fn pass(detail: impl Into<String>) -> Self {
        Self {
            pass: true,
            detail: detail.into(),
        }
    }

    fn fail(detail: impl Into<String>) -> Self {
        Self {
            pass: false,
            detail: detail.into(),
        }
    }
}

/// Per-hypothesis report of the standing assumptions.
#[derive(Debug, Clone, Serialize)]
pub struct HypothesisReport {
    pub null_flux: CheckOutcome,
    pub k_positive: CheckOutcome,
    pub bounds: CheckOutcome,
    pub lipschitz: CheckOutcome,
    pub monotonicity: CheckOutcome,
    pub min_eigenvalue: f64,
    pub lip: f64,
}

impl HypothesisReport {
    pub fn passed(&self) -> bool {
        self.null_flux.pass
            && self.k_positive.pass
            && self.bounds.pass
            && self.lipschitz.pass
            && self.monotonicity.pass
    }
}

/// Certify the model hypotheses on a dense grid over `[−range, range]`:
/// null flux, positive definite `⟨a⊗a⟩`, the declared bounds `σ* ≤ σ ≤ σ^*`,
/// `|σ'| ≤ lip`, and the two monotonicity conditions (`σ' ≤ 0` and
/// `σ + σ'·x ≥ 0`, the derivative form of `x ↦ σ(x)x` nondecreasing).
pub fn validate_hypotheses(
    a: &VelocityField,
    opacity: &Opacity,
    range: f64,
    points: usize,
) -> HypothesisReport {
    let slack = 1e-12;

    let flux = a.flux();
    let flux_norm = flux.iter().fold(0.0f64, |m, f| m.max(f.abs()));
    let null_flux = if flux_norm <= 1e-12 {
        CheckOutcome::pass(format!("|∫a dv| = {flux_norm:.2e}"))
    } else {
        CheckOutcome::fail(format!("∫a dv = {flux:?} (must vanish)"))
    };

    let (k_positive, min_eigenvalue) = match k_average(a) {
        Ok(k) => (
            CheckOutcome::pass(format!("min eigenvalue {:.6}", k.min_eigenvalue)),
            k.min_eigenvalue,
        ),
        Err(e) => (CheckOutcome::fail(e.to_string()), 0.0),
    };

    let mut bounds = CheckOutcome::pass(format!(
        "σ ∈ [{}, {}] on [-{range}, {range}]",
        opacity.sigma_star(),
        opacity.sigma_upper()
    ));
    let mut lipschitz = CheckOutcome::pass(format!("max|σ'| ≤ {}", opacity.lip()));
    let mut monotonicity = CheckOutcome::pass("σ nonincreasing and σ(x)·x nondecreasing");
    let n = points.max(3);
    for i in 0..n {
        let x = -range + 2.0 * range * i as f64 / (n - 1) as f64;
        let s = opacity.value(x);
        let d = opacity.d1(x);
        if bounds.pass && !(opacity.sigma_star() - slack <= s && s <= opacity.sigma_upper() + slack)
        {
            bounds = CheckOutcome::fail(format!(
                "σ({x:.4}) = {s:.6} outside [{}, {}]",
                opacity.sigma_star(),
                opacity.sigma_upper()
            ));
        }
        if lipschitz.pass && d.abs() > opacity.lip() + slack {
            lipschitz = CheckOutcome::fail(format!(
                "|σ'({x:.4})| = {:.6} exceeds declared constant {}",
                d.abs(),
                opacity.lip()
            ));
        }
        if monotonicity.pass {
            if d > slack {
                monotonicity = CheckOutcome::fail(format!("σ'({x:.4}) = {d:.6} > 0"));
            } else if s + d * x < -slack {
                monotonicity = CheckOutcome::fail(format!(
                    "σ(x) + σ'(x)·x = {:.6} < 0 at x = {x:.4}",
                    s + d * x
                ));
            }
        }
    }

    HypothesisReport {
        null_flux,
        k_positive,
        bounds,
        lipschitz,
        monotonicity,
        min_eigenvalue,
        lip: opacity.lip(),
    }
}
