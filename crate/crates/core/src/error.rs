use thiserror::Error;

/// Errors raised across the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid sensor index {index} (array has {count} sensors)")]
    SensorIndex { index: usize, count: usize },

    #[error("point coincides with sensor {0}; bearing undefined")]
    CoincidentPoint(usize),

    #[error("invalid geometry: {0}")]
    Geometry(String),

    #[error("covariate field does not cover point ({easting}, {northing})")]
    CovariateCoverage { easting: f64, northing: f64 },

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("observation outside model support: {0}")]
    Support(String),

    #[error("formula parse error at position {position}: {message}")]
    Formula { position: usize, message: String },

    #[error("design matrix: {0}")]
    Design(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("invalid dataset: {0}")]
    Data(String),

    #[error("source-level grid covers only {coverage:.8} of the prior mass; widen the grid")]
    GridCoverage { coverage: f64 },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("quadrature did not converge: {0}")]
    Quadrature(String),

    #[error("configuration: {0}")]
    Config(String),

    #[error("{path}: {message}")]
    Load { path: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
