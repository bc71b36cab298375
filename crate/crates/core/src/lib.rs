//! Numerical toolkit for singular flows: linear and rescaled linear Poincaré
//! flows, uniform-sink certification, Pliss points, dominated splittings at
//! singularities and the cone-region / invariant-curve experiments built on
//! them.

pub mod cli;
pub mod error;
pub mod field;
pub mod flow;
pub mod linalg;
pub mod pliss;
pub mod poincare;
pub mod sampling;
pub mod sinks;
pub mod splitting;

pub use error::{Error, Result};
