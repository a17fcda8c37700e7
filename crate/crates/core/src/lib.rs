//! Coupled simulation of a kinetic transport–relaxation SPDE and its
//! nonlinear diffusion limit on the periodic torus.
//!
//! The crate co-evolves, under a shared Wiener path,
//!
//! * the kinetic density `f(t, x, v)` driven by stiff transport
//!   `(1/eps) a(v)·∇x`, the relaxation source `(1/eps²) σ(⟨f⟩)(⟨f⟩ − f)`,
//!   and Stratonovich multiplicative noise `f ∘ Q dW`, and
//! * the macroscopic density `ρ(t, x)` of the limiting nonlinear diffusion
//!   equation `dρ = div(σ(ρ)^{-1}⟨K⟩ ∇ρ) dt + ρ ∘ Q dW`,
//!
//! and measures the strong L¹ distance between them across a ladder of
//! scaling parameters `eps`. Hilbert-expansion correctors (the first- and
//! second-order closed forms plus the stochastic third corrector) and a set
//! of numerical probes (dissipativity, accretivity, velocity averaging,
//! non-degeneracy) round out the verification harness.
//!
//! Modules map one-to-one onto the subsystems:
//!
//! * [`fields`] — torus grids, scalar/phase-space fields, spectral calculus;
//! * [`noise`] — finite smooth noise basis, seeded Brownian increments;
//! * [`model`] — velocity field, opacity, relaxation operator, hypothesis
//!   validators;
//! * [`solvers`] — splitting integrators for both equations plus the coupled
//!   error measurement;
//! * [`hilbert`] — expansion correctors, the relaxation semigroup, remainder
//!   assembly;
//! * [`diagnostics`] — smoothed positive part, accretivity probe, averaging
//!   estimator;
//! * [`harness`] — experiment configuration, orchestration, reports.

pub mod diagnostics;
pub mod error;
pub mod fields;
pub mod harness;
pub mod hilbert;
pub mod model;
pub mod noise;
pub mod solvers;
pub mod stats;

pub use error::{Error, Result};
pub use fields::{PhaseField, ScalarField, SpectralCoeffs, TorusGrid};
pub use solvers::Trajectory;
