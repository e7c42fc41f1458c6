//! Walk-outside-spheres solvers for the fractional Laplacian exterior-value
//! problem `(−Δ)^{α/2} u = f` on `D`, `u = g` on the complement.
//!
//! The crate provides a point estimator, a coupled whole-field sampler on
//! nested triangulations, a multilevel Monte Carlo field solver and an inexact
//! Arnoldi iteration for the smallest eigenvalue.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod assumptions;
pub mod cli;
pub mod eigen;
pub mod error;
pub mod field;
pub mod geometry;
pub mod mesh;
pub mod mlmc;
pub mod problems;
pub mod sampling;
pub mod stats;

pub use error::{Error, Result};
pub use geometry::{Domain, Point};
pub use mesh::{BaseMesh, FieldVector, MeshHierarchy, MeshLevel, NormMask};
pub use problems::{Problem, ScalarField};
pub use sampling::StableParams;
