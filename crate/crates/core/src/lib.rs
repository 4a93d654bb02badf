//! Sparse identification of nonlinear delay differential equations.
//!
//! Two identification routes are provided:
//!
//! * [`pipelines::esindy_fit`] regresses derivative samples onto a library built
//!   from the current state and linearly interpolated delayed copies of it. All
//!   delays are optimized externally.
//! * [`pipelines::psindy_fit`] replaces the delay system by its pseudospectral
//!   collocation on Chebyshev extremal nodes. Only the maximum delay needs to be
//!   optimized externally, and the learned model is simulated as an ODE.
//!
//! The external optimizers in [`optimize`] (grid search and particle swarm)
//! minimize the physics-informed objectives from [`pipelines`]. Objective
//! evaluations run on a rayon pool when the `parallel` feature is enabled.

pub mod collocation;
pub mod data;
pub mod error;
pub mod experiment;
pub mod features;
pub mod integrators;
pub mod optimize;
pub mod par;
pub mod pipelines;
pub mod regression;

pub use error::{Error, Result};
