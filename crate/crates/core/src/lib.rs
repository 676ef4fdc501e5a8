//! Numerical toolkit for inhomogeneous anisotropic Musielak-Orlicz modulars
//! and a truncation-based solver for parabolic problems with integrable data.
//!
//! The crate is organized around six concerns:
//! - [`modular`]: evaluable N-functions with sampled structural validation;
//! - [`conjugate`]: discrete Legendre-Fenchel transforms and convex envelopes;
//! - [`truncation`]: scalar truncation / cutoff operators and time windows;
//! - [`metrics`]: modular integrals, Luxemburg norms, convergence diagnostics;
//! - [`balance`]: preset modular families and the balance-condition checkers;
//! - [`mollifier`]: exponential-kernel time regularization and its estimates;
//! - [`solver`]: implicit finite-difference solves with renormalization
//!   diagnostics (a priori bounds, decay, comparison, weak-form residuals).

pub mod balance;
pub mod conjugate;
pub mod error;
pub mod grid;
pub mod metrics;
pub mod modular;
pub mod mollifier;
pub mod report;
pub mod solver;
pub mod suites;
pub mod truncation;

pub use error::{Error, Result};
pub use grid::{Domain, GridField, Mesh, SpaceField, SpaceGrid};
pub use modular::{Growth, ModularFunction, SamplePlan};
