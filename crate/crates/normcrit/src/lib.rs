//! Variational solver for normalized solutions of coupled Sobolev-critical
//! Schrödinger systems in R^4, restricted to radial profiles.

mod banded;
pub mod error;
pub mod grid;
pub mod profiles;
pub mod functionals;
pub mod fiber;
pub mod solvers;
pub mod asymptotics;

pub use error::{NormcritError, Result};
pub use grid::{GridSpec, Mapping, RadialField, RadialGrid};
