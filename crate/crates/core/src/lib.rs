//! Least-squares temporal-difference (LSTD) policy evaluation for
//! continuous-time Markov diffusions observed along a single trajectory.
//!
//! The crate is organised bottom-up:
//!
//! * [`diffusion`] — diffusion models, reward models and trajectory simulation.
//! * [`basis`] — real Fourier features on the torus and their Gram matrices.
//! * [`discretization`] — Lagrange node weights and reward coefficients of the
//!   order-ν time discretization of the Bellman equation.
//! * [`population`] — closed-form value-function oracles via the diagonal
//!   semigroup on Fourier modes.
//! * [`lstd`] — the empirical estimator: assembly, solve, evaluation.
//! * [`metrics`] — Sobolev norms, `Tr(H₁⁻¹H₀)`, log-log rate fits.
//! * [`covariance`] — cross-covariance and martingale-variance diagnostics.
//! * [`advantage`] — plug-in advantage functions for control-affine dynamics.
//! * [`harness`] — seeded experiment sweeps and CSV/JSON emission.

pub mod advantage;
pub mod basis;
pub mod covariance;
pub mod diffusion;
pub mod discretization;
pub mod error;
pub mod harness;
pub mod lstd;
pub mod metrics;
pub mod population;
pub mod rng;

pub use basis::{CoeffMap, FourierBasis, FunctionInSpan, MultiIndex};
pub use diffusion::{DiffusionModel, RewardSpec, StateSpace, Trajectory};
pub use discretization::DiscretizationScheme;
pub use error::{Error, Result};
pub use lstd::{LstdEstimate, SolverPolicy};

/// Formats a float with 17 significant digits, the precision used by every
/// CSV writer in the crate.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}
