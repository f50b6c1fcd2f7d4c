//! Configuration files, experiment orchestration and report serialization.

mod config;
mod report;
mod run;

pub use config::*;
pub use report::*;
pub use run::*;
