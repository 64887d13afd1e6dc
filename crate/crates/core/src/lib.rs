//! Certified dimension reduction for Bayesian inverse problems.
//!
//! Given diagnostic matrices estimated from posterior samples and scores,
//! the crate computes computable upper (and lower) bounds on the divergence
//! between a target measure and its ridge approximation along a subspace,
//! and finds subspaces that minimize those bounds.
//!
//! Module map:
//!
//! - [`linalg`]: symmetric matrices, orthonormal frames, eigensolvers.
//! - [`io`]: CSV readers and writers.
//! - [`diagnostics`]: Monte Carlo estimation of the diagnostic matrices.
//! - [`bounds`]: the divergence bounds and their certificates.
//! - [`grassmann`]: Riemannian minimization of the dimensional bound.
//! - [`gaussian_oracle`]: closed-form ground truth for Gaussian targets.
//! - [`quadrature`]: deterministic KL evaluation for two-dimensional targets.
//! - [`cli`]: the command-line front end.

pub mod bounds;
pub mod cli;
pub mod diagnostics;
pub mod gaussian_oracle;
pub mod grassmann;
pub mod io;
pub mod linalg;
pub mod quadrature;
pub mod synthetic;
