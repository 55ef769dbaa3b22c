//! Pseudo-spectral solver for the gravity water-wave equations in
//! surface-potential (Zakharov/Craig-Sulem) form, together with a
//! reconstruction engine that rebuilds the bulk velocity and pressure
//! fields from the surface unknowns and certifies numerically that the
//! reconstruction solves the incompressible Euler system.
//!
//! The moving fluid domain is flattened onto the fixed strip
//! `z ∈ [-1, 0]` by a smoothed boundary-straightening map; the Laplace
//! problems for the velocity potential are solved there by a
//! matrix-free conjugate-gradient iteration on the transformed
//! Dirichlet energy (spectral in x, second order in z).
//!
//! Crate layout:
//! - [`spectral`]: periodic FFT toolbox (derivatives, multipliers, dealiasing)
//! - [`geometry`]: boundary-straightening map and transformed derivatives
//! - [`elliptic`]: variational Laplace solver and the Dirichlet-Neumann operator
//! - [`evolution`]: surface time stepping and conserved-quantity diagnostics
//! - [`reconstruct`]: bulk-field reconstruction and residual checks
//! - [`config`], [`stream`], [`harness`]: run configuration, snapshot I/O and
//!   the simulate/verify/converge/selftest drivers used by the CLI

pub mod config;
pub mod elliptic;
pub mod evolution;
pub mod geometry;
pub mod harness;
pub mod reconstruct;
pub mod spectral;
pub mod stream;

use thiserror::Error;

/// Typed failures of the numerical core.
///
/// Everything here is a runtime condition of the mathematics (a state
/// leaving the admissible region, or an iterative solve stalling), not a
/// configuration mistake; configuration problems live in
/// [`config::ConfigError`].
#[derive(Debug, Clone, Error)]
pub enum WaveError {
    /// A field that must be finite contained a NaN or infinity.
    #[error("non-finite values in {context}")]
    NonFinite { context: &'static str },

    /// The free surface does not stay a positive distance above the bottom.
    #[error(
        "strip condition violated: min surface elevation {min_eta} leaves gap {gap} \
         above bottom -{h_b} (required > {margin})"
    )]
    StripViolation {
        min_eta: f64,
        h_b: f64,
        gap: f64,
        margin: f64,
    },

    /// The straightening map lost its required monotonicity in z.
    #[error("separation violated: min dz_rho = {min_dz_rho} < required {required}")]
    SeparationViolation { min_dz_rho: f64, required: f64 },

    /// The smoothing parameter is too large for this surface amplitude.
    #[error("smoothing bound violated: delta * |eta|_W1inf = {product} > {limit}")]
    SmoothingBound { product: f64, limit: f64 },

    /// The conjugate-gradient solve did not reach the requested tolerance.
    #[error("elliptic solve did not converge: {iterations} iterations, relative residual {residual}")]
    NoConvergence { iterations: usize, residual: f64 },

    /// Two fields that must share a collocation grid do not.
    #[error("grid mismatch: expected {expected:?}, got {got:?}")]
    GridMismatch {
        expected: (usize, usize),
        got: (usize, usize),
    },

    /// A verification pass needs at least three consecutive snapshots.
    #[error("insufficient snapshots: need at least 3, got {got}")]
    InsufficientSnapshots { got: usize },
}
