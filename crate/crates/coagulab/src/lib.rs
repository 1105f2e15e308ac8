//! Stationary solutions of the coagulation equation with a source, computed on truncated
//! discrete systems and compared against continuous power-law predictions.

pub mod cli;
pub mod continuum;
pub mod diagnostics;
pub mod discrete;
pub mod error;
pub mod kernels;
pub mod ode;
mod quadrature;
pub mod steady;
pub mod sweep;

pub use error::{Error, Result};
