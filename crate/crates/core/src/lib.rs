//! Finite-time boundary stabilization of one-dimensional linear hyperbolic
//! systems with time- and space-dependent coefficients.
//!
//! The pipeline: describe a system ([`coeffs`]), trace its characteristics
//! ([`characteristics`]), build the backstepping kernels and the boundary
//! feedback ([`transforms`]), then simulate and check the closed loop
//! ([`simulator`], [`verify`]).

pub mod characteristics;
pub mod cli;
pub mod coeffs;
pub mod config;
pub mod error;
pub mod grid;
pub mod simulator;
pub mod transforms;
pub mod verify;

pub use error::{Error, Result};
