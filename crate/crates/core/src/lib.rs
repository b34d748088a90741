//! Lie-Galerkin control toolkit for bilinear Schrodinger systems.
//!
//! The crate certifies Lie-Galerkin control and stalking conditions on
//! Galerkin truncations, plans piecewise-constant generator schedules in
//! SU(n), converts them into admissible resonant controls and validates the
//! result by propagating larger truncations.
//!
//! Indices are 0-based throughout the API. The custom-model file format is
//! 1-based.

pub mod error;
pub mod galerkin;
pub mod liealg;
pub mod linalg;
pub mod models;
pub mod pipeline;
pub mod planner;
pub mod propagate;
pub mod scalar;
pub mod synth;

pub use error::{Error, Result};
pub use scalar::Real;

/// Complex scalar in double precision.
pub type C64 = num_complex::Complex64;
/// Dense complex matrix in double precision.
pub type CMatrix = nalgebra::DMatrix<C64>;
/// Dense complex vector in double precision.
pub type CVector = nalgebra::DVector<C64>;
/// Truncated system in double precision.
pub type TruncatedSystem = galerkin::TruncatedSystem<f64>;
/// Truncated system in single precision.
pub type TruncatedSystemF32 = galerkin::TruncatedSystem<f32>;
/// Lie closure in double precision.
pub type LieClosureResult = liealg::LieClosureResult<f64>;
