//! Bayesian D- and A-optimal experimental design for linear inverse problems
//! with Gaussian priors on discretized Hilbert spaces.
//!
//! The crate is layered bottom-up:
//!
//! - [`hilbert`]: weighted-inner-product operators, spectra, traces and
//!   `log det(I + A)`.
//! - [`gaussian`]: Gaussian measures, sampling, affine pushforwards and the
//!   moment/exponential-integral identities.
//! - [`inverse`]: the linear-Gaussian inverse problem, its posterior and the
//!   prior-preconditioned misfit Hessian.
//! - [`oed`]: design criteria (expected information gain, Bayes risk), their
//!   Monte Carlo oracles and greedy sensor selection.
//! - [`models`]: a 1D heat-equation reference problem.

pub mod error;
pub mod gaussian;
pub mod hilbert;
pub mod inverse;
pub mod models;
pub mod oed;
pub mod rng;
pub mod stats;

pub use error::{Error, Result};
