//! Numerical probes: the smoothed positive part, the accretivity of the
//! weighted relaxation operator in L¹ of velocity, and the velocity-averaging
//! regularity estimator.
//!
//! The smoothing kernel is the quintic smoothstep `ψ(y) = 6y⁵ − 15y⁴ + 10y³`
//! (C², nondecreasing, 0 below 0 and 1 above 1), giving the smoothed positive
//! part `φ_δ(x) = ∫₀^x ψ(y/δ) dy` a closed form — no quadrature noise enters
//! the probe.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::fields::ScalarField;
use crate::model::Opacity;
use crate::solvers::Trajectory;
use crate::stats;

/// Smoothed positive part with transition width `delta`.
#[derive(Debug, Clone, Copy)]
pub struct PhiDelta {
    delta: f64,
}

/// Sup of `ψ'` on [0, 1]: `30 y²(1−y)²` peaks at `y = 1/2` with value 15/8.
pub const PSI_PRIME_SUP: f64 = 1.875;

fn psi(y: f64) -> f64 {
    if y <= 0.0 {
        0.0
    } else if y >= 1.0 {
        1.0
    } else {
        ((6.0 * y - 15.0) * y + 10.0) * y * y * y
    }
}

fn psi_prime(y: f64) -> f64 {
    if y <= 0.0 || y >= 1.0 {
        0.0
    } else {
        30.0 * y * y * (1.0 - y) * (1.0 - y)
    }
}

/// Antiderivative of ψ on [0, 1]: `u⁶ − 3u⁵ + 5u⁴/2`, with `Ψ(1) = 1/2`.
fn psi_antiderivative(u: f64) -> f64 {
    ((u - 3.0) * u + 2.5) * u.powi(4)
}

impl PhiDelta {
    pub fn new(delta: f64) -> Result<Self> {
        if delta <= 0.0 {
            return Err(Error::InvalidConfig(format!(
                "smoothing width must be positive, got {delta}"
            )));
        }
        Ok(Self { delta })
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    /// `(φ_δ(x), φ_δ'(x), φ_δ''(x))`, all in closed form.
    pub fn eval(&self, x: f64) -> (f64, f64, f64) {
        let d = self.delta;
        if x <= 0.0 {
            (0.0, 0.0, 0.0)
        } else if x >= d {
            (x - d / 2.0, 1.0, 0.0)
        } else {
            let u = x / d;
            (d * psi_antiderivative(u), psi(u), psi_prime(u) / d)
        }
    }

    pub fn value(&self, x: f64) -> f64 {
        self.eval(x).0
    }

    pub fn derivative(&self, x: f64) -> f64 {
        self.eval(x).1
    }
}

/// One evaluation of the accretivity probe: the two smoothed pairings and the
/// bound they must respect.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct AccretivitySample {
    pub j_plus: f64,
    pub j_minus: f64,
    pub bound: f64,
}

/// Probe the accretivity of `h ↦ σ(⟨h⟩)(⟨h⟩ − h)` on a pair of velocity
/// profiles (`f` nonnegative), against the smoothed sign `φ_δ'`:
///
/// `J⁺ = ∫ φ_δ'(f−g)[σ(⟨f⟩)L(f) − σ(⟨g⟩)L(g)] dv` and the mirrored `J⁻`,
/// both bounded by `5(σ^* + ‖σ‖_Lip)(1 + ‖f‖_{L¹_v})·δ`. The constant
/// aggregates the worst case of each monotonicity/transition regime of the
/// pairing, five of which contribute at most `(σ^* + ‖σ‖_Lip)(1 + ⟨|f|⟩)δ`
/// apiece.
pub fn accretivity_probe(
    f: &[f64],
    g: &[f64],
    opacity: &Opacity,
    pd: &PhiDelta,
) -> Result<AccretivitySample> {
    if f.len() != g.len() || f.is_empty() {
        return Err(Error::InvalidConfig(
            "accretivity probe needs two equal-length velocity profiles".into(),
        ));
    }
    if f.iter().any(|&v| v < -1e-12) {
        return Err(Error::InvalidConfig(
            "accretivity probe requires nonnegative f".into(),
        ));
    }
    let n = f.len() as f64;
    let mean_f = f.iter().sum::<f64>() / n;
    let mean_g = g.iter().sum::<f64>() / n;
    let sf = opacity.value(mean_f);
    let sg = opacity.value(mean_g);
    let mut j_plus = 0.0;
    let mut j_minus = 0.0;
    let mut l1_f = 0.0;
    for (&fv, &gv) in f.iter().zip(g.iter()) {
        let lf = sf * (mean_f - fv);
        let lg = sg * (mean_g - gv);
        j_plus += pd.derivative(fv - gv) * (lf - lg);
        j_minus += pd.derivative(gv - fv) * (lg - lf);
        l1_f += fv.abs();
    }
    j_plus /= n;
    j_minus /= n;
    l1_f /= n;
    let bound = 5.0 * (opacity.sigma_upper() + opacity.lip()) * (1.0 + l1_f) * pd.delta();
    Ok(AccretivitySample {
        j_plus,
        j_minus,
        bound,
    })
}

/// Outcome of a randomized accretivity battery at one smoothing width.
#[derive(Debug, Clone, Serialize)]
pub struct AccretivityBattery {
    pub delta: f64,
    pub trials: usize,
    pub violations: usize,
    /// Largest observed `max(J⁺, J⁻)/bound`.
    pub max_ratio: f64,
    pub seed: u64,
}

/// Random trigonometric profile squared (for `f ≥ 0`) or raw (for `g`),
/// on `nv` velocity nodes.
fn random_profile(rng: &mut ChaCha8Rng, nv: usize, nonnegative: bool) -> Vec<f64> {
    let base: f64 = rng.gen_range(-1.0..1.0);
    let coeffs: Vec<(f64, f64)> = (1..=3)
        .map(|_| (rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
        .collect();
    let scale: f64 = rng.gen_range(0.1..2.0);
    (0..nv)
        .map(|j| {
            let v = j as f64 / nv as f64;
            let mut acc = base;
            for (m, (a, b)) in coeffs.iter().enumerate() {
                let th = 2.0 * std::f64::consts::PI * (m + 1) as f64 * v;
                acc += a * th.sin() + b * th.cos();
            }
            if nonnegative {
                scale * acc * acc
            } else {
                scale * acc
            }
        })
        .collect()
}

/// Run `trials` random pairs at smoothing width `delta` and count violations
/// of the accretivity bound. Half the trials take `g` within `O(δ)` of `f` to
/// stress the transition region; the rest draw `g` independently (including
/// sign-changing profiles).
pub fn accretivity_battery(
    opacity: &Opacity,
    delta: f64,
    trials: usize,
    nv: usize,
    seed: u64,
) -> Result<AccretivityBattery> {
    let pd = PhiDelta::new(delta)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut violations = 0usize;
    let mut max_ratio = f64::NEG_INFINITY;
    for trial in 0..trials {
        let f = random_profile(&mut rng, nv, true);
        let g = if trial % 2 == 0 {
            f.iter()
                .map(|&fv| fv + delta * rng.gen_range(-2.0..2.0))
                .collect()
        } else {
            random_profile(&mut rng, nv, false)
        };
        let sample = accretivity_probe(&f, &g, opacity, &pd)?;
        let j = sample.j_plus.max(sample.j_minus);
        max_ratio = max_ratio.max(j / sample.bound);
        if j > sample.bound + 1e-12 {
            violations += 1;
        }
    }
    Ok(AccretivityBattery {
        delta,
        trials,
        violations,
        max_ratio,
        seed,
    })
}

/// Monte Carlo estimate of the time-integrated fractional regularity of the
/// velocity averages, `E ∫₀^T ‖⟨f⟩(s)‖²_{H^{α/2}} ds`, by trapezoid over the
/// stored sample times.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct AveragingEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub num_paths: usize,
}

pub fn averaging_estimate(
    rho_paths: &[Trajectory<ScalarField>],
    alpha: f64,
) -> Result<AveragingEstimate> {
    if rho_paths.is_empty() {
        return Err(Error::InvalidConfig(
            "averaging estimator needs a nonempty ensemble".into(),
        ));
    }
    let s = alpha / 2.0;
    let mut integrals = Vec::with_capacity(rho_paths.len());
    for traj in rho_paths {
        if traj.len() < 2 {
            return Err(Error::InvalidConfig(
                "averaging estimator needs at least two samples per path".into(),
            ));
        }
        let norms_sq: Vec<f64> = traj.states.iter().map(|r| r.hs_norm(s).powi(2)).collect();
        let mut integral = 0.0;
        for i in 0..traj.len() - 1 {
            let dt = traj.times[i + 1] - traj.times[i];
            integral += 0.5 * dt * (norms_sq[i] + norms_sq[i + 1]);
        }
        integrals.push(integral);
    }
    let (mean, std_error) = stats::mean_and_stderr(&integrals);
    Ok(AveragingEstimate {
        mean,
        std_error,
        num_paths: integrals.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::TorusGrid;

    #[test]
    fn phi_delta_rejects_nonpositive_width() {
        assert!(PhiDelta::new(0.0).is_err());
    }

    #[test]
    fn phi_delta_closed_form_values() {
        let d = 0.1;
        let pd = PhiDelta::new(d).unwrap();
        // below zero everything vanishes
        assert_eq!(pd.eval(-1.0), (0.0, 0.0, 0.0));
        assert_eq!(pd.eval(0.0), (0.0, 0.0, 0.0));
        // the quintic smoothstep integrates to 1/2 over its transition
        // (cross-checked by fine midpoint quadrature)
        let fine = 100_000;
        let quad: f64 = (0..fine)
            .map(|i| psi((i as f64 + 0.5) / fine as f64))
            .sum::<f64>()
            / fine as f64;
        assert!((quad - 0.5).abs() < 1e-10);
        let (v, dv, ddv) = pd.eval(d);
        assert!((v - d / 2.0).abs() < 1e-15);
        assert!((dv - 1.0).abs() < 1e-15);
        assert_eq!(ddv, 0.0);
        // beyond the transition: unit slope, value x − δ/2
        let (v, dv, ddv) = pd.eval(0.35);
        assert!((v - (0.35 - d / 2.0)).abs() < 1e-15);
        assert_eq!(dv, 1.0);
        assert_eq!(ddv, 0.0);
    }

    #[test]
    fn phi_delta_sandwich_and_derivative_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for &delta in &[0.1, 1e-3] {
            let pd = PhiDelta::new(delta).unwrap();
            for _ in 0..1_000_000 {
                let x: f64 = rng.gen_range(-2.0..2.0);
                let (v, dv, ddv) = pd.eval(x);
                let xp = x.max(0.0);
                assert!(v <= xp + 1e-15);
                assert!(v >= xp - delta - 1e-15);
                assert!((-1e-15..=1.0 + 1e-15).contains(&dv));
                assert!(ddv.abs() <= PSI_PRIME_SUP / delta + 1e-12);
                if !(0.0..delta).contains(&x) {
                    assert_eq!(ddv, 0.0);
                }
            }
        }
    }

    #[test]
    fn phi_delta_derivative_is_monotone() {
        let pd = PhiDelta::new(0.05).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10_000 {
            let a: f64 = rng.gen_range(-1.0..1.0);
            let b: f64 = rng.gen_range(-1.0..1.0);
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            assert!(pd.derivative(lo) <= pd.derivative(hi) + 1e-15);
        }
    }

    #[test]
    fn probe_vanishes_on_identical_arguments() {
        let op = Opacity::logistic(1.0, 2.0, 1.0).unwrap();
        let pd = PhiDelta::new(0.01).unwrap();
        let f: Vec<f64> = (0..32).map(|j| 1.0 + (j as f64 / 32.0)).collect();
        let s = accretivity_probe(&f, &f, &op, &pd).unwrap();
        assert_eq!(s.j_plus, 0.0);
        assert_eq!(s.j_minus, 0.0);
        assert!(s.bound > 0.0);
    }

    #[test]
    fn probe_rejects_negative_f() {
        let op = Opacity::constant(1.0).unwrap();
        let pd = PhiDelta::new(0.01).unwrap();
        let f = vec![-1.0; 8];
        let g = vec![0.0; 8];
        assert!(accretivity_probe(&f, &g, &op, &pd).is_err());
    }

    #[test]
    fn battery_with_zero_g_never_violates() {
        // single-function accretivity: g ≡ 0
        let op = Opacity::logistic(1.0, 2.0, 1.0).unwrap();
        let pd = PhiDelta::new(0.01).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let zero = vec![0.0f64; 48];
        for _ in 0..10_000 {
            let f = random_profile(&mut rng, 48, true);
            let s = accretivity_probe(&f, &zero, &op, &pd).unwrap();
            assert!(s.j_plus <= s.bound && s.j_minus <= s.bound);
        }
    }

    #[test]
    fn battery_reports_zero_violations_for_valid_opacities() {
        for op in [
            Opacity::logistic(1.0, 2.0, 1.0).unwrap(),
            Opacity::constant(1.5).unwrap(),
        ] {
            for &delta in &[1e-1, 1e-2] {
                let report = accretivity_battery(&op, delta, 2000, 48, 5).unwrap();
                assert_eq!(report.violations, 0, "{report:?}");
                assert!(report.max_ratio <= 1.0);
            }
        }
    }

    #[test]
    fn positive_part_of_probe_decays_with_delta() {
        let op = Opacity::logistic(1.0, 2.0, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let f = random_profile(&mut rng, 64, true);
        let g = random_profile(&mut rng, 64, false);
        let mut last = f64::INFINITY;
        for &delta in &[1e-1, 1e-2, 1e-3, 1e-4, 1e-5, 1e-6] {
            let pd = PhiDelta::new(delta).unwrap();
            let s = accretivity_probe(&f, &g, &op, &pd).unwrap();
            let pos = s.j_plus.max(0.0);
            assert!(pos <= s.bound);
            assert!(pos <= last + 1e-12);
            last = pos;
        }
        // in the vanishing-width limit the pairing is nonpositive
        assert!(last <= 1e-4);
    }

    #[test]
    fn averaging_estimate_of_flat_ensemble() {
        let grid = TorusGrid::new(1, 32, 8).unwrap();
        let c = 1.3;
        let t_final = 0.5;
        let mut paths = Vec::new();
        for _ in 0..4 {
            let mut traj = Trajectory::new();
            for i in 0..=10 {
                traj.push(t_final * i as f64 / 10.0, ScalarField::constant(grid, c));
            }
            paths.push(traj);
        }
        let est = averaging_estimate(&paths, 0.5).unwrap();
        assert!((est.mean - t_final * c * c).abs() < 1e-12);
        assert_eq!(est.std_error, 0.0);
        assert_eq!(est.num_paths, 4);
    }

    #[test]
    fn averaging_estimate_rejects_empty_ensembles() {
        assert!(averaging_estimate(&[], 0.5).is_err());
    }
}
