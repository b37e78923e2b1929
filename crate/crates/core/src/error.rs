use std::fmt;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Errors raised by the modelling, simulation, inference and ingestion layers.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("time ordering violated: {0}")]
    Ordering(String),
    #[error("degenerate process: {0}")]
    DegenerateProcess(String),
    #[error("constraint violation: {0}")]
    ConstraintViolation(String),
    #[error("incomplete latent path: no value at t = {0}")]
    IncompletePath(f64),
    #[error("hazard instability: {0}")]
    Instability(String),
    #[error("initialization failed: {0}")]
    Initialization(String),
    #[error("data inconsistency: {0}")]
    DataInconsistency(String),
    #[error("schema violation at {location}: {message}")]
    Schema { location: String, message: String },
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Coarse classification used by front ends to pick an exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Usage,
    Data,
    Numerical,
}

impl Error {
    pub fn schema(location: impl fmt::Display, message: impl Into<String>) -> Self {
        Error::Schema {
            location: location.to_string(),
            message: message.into(),
        }
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Config(_) | Error::InvalidInput(_) => ErrorClass::Usage,
            Error::Schema { .. }
            | Error::DataInconsistency(_)
            | Error::Ordering(_)
            | Error::IncompletePath(_)
            | Error::Io(_)
            | Error::Csv(_)
            | Error::Json(_) => ErrorClass::Data,
            Error::InvalidParameter(_)
            | Error::DegenerateProcess(_)
            | Error::ConstraintViolation(_)
            | Error::Instability(_)
            | Error::Initialization(_)
            | Error::Numerical(_) => ErrorClass::Numerical,
        }
    }
}
