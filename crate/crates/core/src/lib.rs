//! Numerical laboratory for the semilinear equation `Δu + q u^m = 0` on the
//! unit square: forward simulation of the nonlinear Dirichlet-to-Neumann map,
//! higher-order linearization, measure-valued boundary data, and recovery of
//! the potential `q` from DN data paired with a single fixed boundary measure.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod grid;
pub mod linear_solve;
pub mod linearization;
pub mod measure;
pub mod reconstruct;
pub mod runge;
pub mod semilinear;

pub use error::{Error, Result};
pub use grid::{BoundaryArc, BoundaryData, ComplexField, Grid, ScalarField};
pub use measure::BoundaryMeasure;

/// Crate version, recorded in experiment manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
