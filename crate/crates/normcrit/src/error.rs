use thiserror::Error;

pub type Result<T> = std::result::Result<T, NormcritError>;

#[derive(Debug, Error)]
pub enum NormcritError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("fields live on different grids")]
    GridMismatch,
    #[error("resolution lost: {0}")]
    Resolution(String),
    #[error("parameter out of range: {0}")]
    Parameter(String),
    #[error("coupling not admissible: {0}")]
    Admissibility(String),
    #[error("geometry condition fails: {0}")]
    Geometry(String),
    #[error("shooting bracket has no sign change: {0}")]
    NoSignChange(String),
    #[error("projection undefined: {0}")]
    ProjectionUndefined(String),
    #[error("no convergence after {iterations} iterations (residual {residual:.3e})")]
    NonConvergence { iterations: usize, residual: f64 },
    #[error("not applicable: {0}")]
    NotApplicable(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed data: {0}")]
    Format(String),
}
