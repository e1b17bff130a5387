use thiserror::Error;

/// Errors raised anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("refinement level {level} exceeds the limit of {max}")]
    LevelTooLarge { level: u32, max: u32 },

    #[error("edge index {index} out of range ({count} edges)")]
    EdgeOutOfRange { index: usize, count: usize },

    #[error("unsupported quadrature degree {degree} (supported: {min}..={max})")]
    UnsupportedDegree { degree: usize, min: usize, max: usize },

    #[error("unsupported element: {0}")]
    UnsupportedElement(String),

    #[error("wrong element kind for {operation}: {found}")]
    WrongElementKind { operation: &'static str, found: String },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("matrix is not positive definite (pivot {pivot} at row {row})")]
    NotPositiveDefinite { row: usize, pivot: f64 },

    #[error("factorization hit a zero pivot at row {0}")]
    SingularPivot(usize),

    #[error("eigensolver did not converge after {iterations} iterations (worst residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("contour rank ambiguity: numerical rank {rank} reached probe rank {probe_rank}")]
    ProbeRankTooSmall { rank: usize, probe_rank: usize },

    #[error("contour residual {residual:e} too large; an eigenvalue may lie near the contour")]
    ContourResidual { residual: f64 },

    #[error("cannot transfer between meshes: {0}")]
    Transfer(String),

    #[error("eigenvalue count mismatch: {0}")]
    CountMismatch(String),

    #[error("no analytic reference: {0}")]
    NoAnalyticReference(String),

    #[error("rate fit needs at least 3 points, got {0}")]
    TooFewPoints(usize),

    #[error("errors are not all positive; the rate is saturated")]
    SaturatedRate,

    #[error("invalid study configuration: {0}")]
    InvalidConfig(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
