//! Rank-based interacting Brownian particles with a common noise, the porous
//! medium equation that describes their large-population limit without common
//! noise, and the random shift that turns that deterministic limit into the
//! stochastic one.
//!
//! The crate is organised bottom-up:
//!
//! * [`measures`]: empirical measures and grid CDFs on the line, 1-D
//!   Wasserstein distances and shifts.
//! * [`coefficients`]: the rank coefficients `b`, `sigma`, the common-noise
//!   coefficient `gamma` and the initial law.
//! * [`noise`]: counter-based random streams shared across system sizes.
//! * [`particle_sim`]: Euler-Maruyama for the particle system.
//! * [`pme_solver`]: explicit monotone finite differences for the porous medium
//!   equation `R_t = -B(R)_x + Sigma(R)_xx`.
//! * [`limit_solver`]: Picard iteration for `F(t, x) = R(t, x - Gamma(t))` and
//!   the weak residual of the limiting SPDE.
//! * [`convergence`]: coupled particle/limit comparisons and rate fits.

pub mod coefficients;
pub mod convergence;
pub mod error;
pub mod io;
pub mod limit_solver;
pub mod measures;
pub mod noise;
pub mod particle_sim;
pub mod pme_solver;
pub mod weak_form;

pub use coefficients::{
    CoefficientSpec, GammaKind, GammaSpec, InitialLaw, InitialLawSpec, Integrand, RankFunction,
};
pub use error::{Error, Result};
pub use limit_solver::{FixedPointConfig, InitialCandidate, LimitPath, LimitProblem};
pub use measures::{EmpiricalMeasure, GridCdf, MeasureRef, WassersteinOrder};
pub use noise::{BrownianPath, NoiseBundle, SeedLineage};
pub use particle_sim::{SimConfig, TrajectoryRecord};
pub use pme_solver::{PmeGrid, PmeSolution};
pub use weak_form::{QvWeighting, TestFunction};

/// Mass allowed to fall outside a truncated grid before an operation fails.
pub const BOUNDARY_MASS_TOL: f64 = 1e-6;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
