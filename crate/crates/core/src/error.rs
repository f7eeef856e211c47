use thiserror::Error;

/// Every failure surfaced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid problem: {0}")]
    InvalidProblem(String),
    #[error("invalid function: {0}")]
    InvalidFunction(String),
    #[error("invalid boundary partition: {0}")]
    BoundaryPartition(String),
    #[error("target discretization is not nested in the source: {0}")]
    NotNested(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("non-invertible operator: {0}")]
    Singular(String),
    #[error("degenerate mode: {0}")]
    DegenerateMode(String),
    #[error("equilibration failed: {0}")]
    Equilibration(String),
    #[error("FE-equilibration property violated: {0}")]
    PropertyViolated(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Short machine-readable tag used in CLI error reports.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidProblem(_) => "invalid_problem",
            Error::InvalidFunction(_) => "invalid_function",
            Error::BoundaryPartition(_) => "boundary_partition",
            Error::NotNested(_) => "not_nested",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::Singular(_) => "singular",
            Error::DegenerateMode(_) => "degenerate_mode",
            Error::Equilibration(_) => "equilibration",
            Error::PropertyViolated(_) => "property_violated",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
