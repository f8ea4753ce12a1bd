//! Simulation and numerical verification for variable-order fractional
//! kinetic equations driven by mean-field continuous-time random walks.
//!
//! The pieces, bottom-up:
//!
//! * [`model`]: coefficients, measures and test functionals.
//! * [`random`]: reproducible streams, Pareto waiting times, one-sided stable laws.
//! * [`ctrw`]: the particle chain with power-tail waiting times and its
//!   scaled inverse-time evaluation.
//! * [`kinetic`]: the deterministic limiting flow (grid and particle solvers).
//! * [`subordinator`]: the stable-like subordinator driven by the flow, its
//!   inverse, and the solution estimators.
//! * [`fractional`]: the variable-order right Caputo operator, limit
//!   generator and residual checks.
//! * [`appendix_rates`]: quadrature checks of the jump-approximation rate bound.
//! * [`harness`]: configuration, convergence sweeps and artifact writing.

pub mod appendix_rates;
pub mod ctrw;
pub mod error;
pub mod fractional;
pub mod harness;
pub mod kinetic;
pub mod model;
pub mod quad;
pub mod random;
pub mod stats;
pub mod subordinator;

pub use error::{Error, Result};
