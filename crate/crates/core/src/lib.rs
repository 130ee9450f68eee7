//! Numerical toolkit for risk-sensitive mean-field control under partial
//! observation.
//!
//! * [`model`]: coefficient bundles, the LQ special case and the time grid.
//! * [`sde`]: Brownian drivers and Euler–Maruyama simulation of the merged
//!   system `(ρ, x, ξ)` with an interacting-particle mean field, plus the
//!   generic martingale `v^θ`.
//! * [`riccati`]: the two LQ gain equations.
//! * [`filter`]: weighted particle filter and the LQ closed-form filter.
//! * [`hamiltonian`]: risk-neutral, risk-sensitive and augmented Hamiltonians,
//!   the adjoint transform and the LQ adjoint closed forms.
//! * [`montecarlo`]: cost estimation, the small-θ expansion check, the
//!   variational-inequality certifier and perturbation tests.

pub mod error;
pub mod filter;
pub mod hamiltonian;
pub mod model;
pub mod montecarlo;
pub mod riccati;
pub mod sde;
pub mod stats;

pub use error::{Error, Result};
pub use model::{expand_lq, ControlRange, Coefficients, LqSpec, ModelSpec, TimeGrid};
pub use riccati::{Case, RiccatiSolution};
