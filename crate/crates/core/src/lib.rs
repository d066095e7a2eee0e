//! Point-cloud aerodynamic surrogate built on physics attention.
//!
//! A cloud of surface points (with optional normals) and a cloud of volume
//! query points are embedded into one sequence, passed through a stack of
//! physics-attention layers, and decoded by three heads: a pooled drag
//! coefficient, per-surface-point pressure and per-volume-point velocity.

// Index loops read closer to the math in the small dense kernels.
#![allow(clippy::needless_range_loop)]

pub mod checkpoint;
pub mod datagen;
pub mod error;
pub mod linalg;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod physatt;
pub mod pointcloud;
pub mod real;
pub mod rng;
pub mod sampling;
pub mod training;

pub use error::{Error, Result};
pub use linalg::{FeatureMatrix, Matrix};
pub use real::{Precision, Real};
