//! Numerical toolkit for controlled path-dependent SDEs on a discrete
//! path space: simulation, value-function estimation by sup over control
//! families, pathwise dynamic programming checks, G-expectations as the
//! volatility-uncertainty special case, and 2BSDE decompositions of the
//! value process with exact binomial-tree oracles at desk scale.

pub mod bsde2;
pub mod cli;
pub mod config;
pub mod control;
pub mod error;
pub mod gexp;
pub mod pathspace;
pub mod registry;
pub mod report;
pub mod rng;
pub mod sde;
pub mod value;

pub use error::{Error, Result};
