//! Simulation and analysis of supercritical general branching processes
//! (Crump–Mode–Jagers processes) counted with random characteristics.
//!
//! A population starts from a single ancestor born at time 0. Every
//! individual `u` lives for a (possibly infinite) lifetime ζ_u and gives
//! birth at the points of a reproduction point process ξ_u; the pairs
//! (ξ_u, ζ_u) are i.i.d. across individuals. Each individual is scored by a
//! characteristic φ evaluated at its current age, and the process
//!
//! ```text
//! Z_t^φ = Σ_u φ_u(t − S(u))        (S(u) = birth time of u)
//! ```
//!
//! grows like `e^{αt}` where α, the Malthusian parameter, solves
//! `𝓛μ(α) = 1` for the reproduction intensity transform
//! `𝓛μ(z) = E[Σ_j e^{−z X_j}]`.
//!
//! The crate is organised around that pipeline:
//!
//! * [`laws`] — reproduction point processes with exact Laplace transforms
//!   and derivatives (Galton–Watson, epidemic Gamma, Poisson with lifetimes,
//!   conservative fragmentation).
//! * [`spectral`] — everything analytic: α, β = −(𝓛μ)′(α), the complex roots
//!   Λ≥ of `𝓛μ(z) = 1` with multiplicities, the matrix kernel exp(γ,s,k),
//!   the coefficient vectors b_λ and a_λ, the critical-line variances ρ_l²,
//!   and the limit variance σ².
//! * [`characteristics`] — scoring rules φ with exact mean functions.
//! * [`engine`] — event-driven simulation, path functionals (Z_t^φ, N(t),
//!   Nerman martingale statistics W_t^{(j)}(λ)), and exact renewal solvers
//!   for the mean E[Z_t^φ].
//! * [`harness`] — Monte Carlo verification of the central limit theorems:
//!   builds the random expansion H(t), normalises fluctuations, and tests
//!   them against the predicted mixture law σ·√(W/β)·𝒩(0,1).
//! * [`rng`] — splittable deterministic random streams (one per replicate).

pub mod characteristics;
pub mod engine;
pub mod harness;
pub mod laws;
pub mod rng;
pub mod spectral;

pub use num_complex::Complex64;

/// Errors produced by the analysis and simulation pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Invalid model, characteristic, or run parameters.
    #[error("configuration error: {0}")]
    Config(String),
    /// An evaluation outside a transform's convergence domain or a query
    /// outside the simulated horizon.
    #[error("domain error: {0}")]
    Domain(String),
    /// A numeric procedure failed to converge or produced an inconsistent
    /// result (root finding, quadrature, coefficient solves, ...).
    #[error("numerical error: {0}")]
    Numerical(String),
    /// Too few usable replicates to form the requested statistic.
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    /// Reading or writing a file (path dumps, result tables) failed.
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
