//! Coefficient sequences, weak and weak-* measurements, and the
//! H-convergence experiments built on them.

mod experiment;
mod families;
mod suite;

pub use experiment::*;
pub use families::*;
pub use suite::*;
