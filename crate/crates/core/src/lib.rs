//! Uncertainty propagation through networks of coupled components.
//!
//! Components exchange polynomial chaos coefficients along directed edges;
//! the coupled fixed point is found by Jacobi or Gauss–Seidel relaxation,
//! optionally with Anderson acceleration.

pub mod anderson;
pub mod error;
pub mod error_bounds;
pub mod fem_diffusion;
pub mod harness;
pub mod network;
pub mod pce;
pub mod relaxation;
pub mod verify;

pub use error::{Error, Result};
