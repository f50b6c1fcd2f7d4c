use thiserror::Error;

#[derive(Debug, Error)]
pub enum LabError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("evaluation error: {0}")]
    Evaluation(String),
    #[error("mesh mismatch: {left} cells vs {right} cells")]
    MeshMismatch { left: usize, right: usize },
    #[error("quadrature grid mismatch")]
    GridMismatch,
    #[error("solver failed after {iterations} iterations (scaled residual {residual:.3e}): {reason}")]
    SolverFailure {
        iterations: usize,
        residual: f64,
        reason: String,
    },
    #[error("experiment aborted at k = {k}: {source}")]
    ExperimentAborted {
        k: usize,
        #[source]
        source: Box<LabError>,
    },
}

pub type Result<T> = std::result::Result<T, LabError>;

pub(crate) fn invalid(msg: impl Into<String>) -> LabError {
    LabError::InvalidArgument(msg.into())
}
