use thiserror::Error;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("negative argument {0} to a comparison function")]
    NegativeArgument(f64),
    #[error("radius {radius} is not admissible for this model (cap {cap})")]
    InadmissibleRadius { radius: f64, cap: f64 },
    #[error("point pair at distance {distance} reaches the injectivity radius {limit}")]
    CutLocus { distance: f64, limit: f64 },
    #[error("gradient vanishes and p = {p} < 2")]
    SingularGradient { p: f64 },
    #[error("node {0} is on the boundary")]
    BoundaryNode(usize),
    #[error("solver did not converge after {iterations} iterations (last residual {last:e})")]
    NotConverged { iterations: usize, last: f64, history: Vec<f64> },
    #[error("audit failed: {0}")]
    AuditFailed(String),
    #[error("no admissible barrier found: {0}")]
    NoBarrier(String),
}

pub type Result<T> = std::result::Result<T, Error>;
