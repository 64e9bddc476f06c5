//! Discrete p-capacities, isocapacitary constants and first eigenvalues of the
//! graph p-Laplacian, with numerical certification of the two-sided
//! eigenvalue/isocapacity brackets.

pub mod capacity;
pub mod coarea;
pub mod eigen;
pub mod energy;
pub mod error;
pub mod graph;
pub mod harness;
pub mod isocap;

pub use error::{ConvergenceError, Error, Result};
