//! Heterogeneous fractional p-Laplace Dirichlet problems on `(0, 1)` and a
//! laboratory for nonlocal H-convergence of their coefficient sequences.

pub mod assembly;
pub mod calculus;
pub mod error;
pub mod fields;
pub mod io;
pub mod lab;
pub mod quadrature;
pub mod solver;

pub use error::{LabError, Result};
