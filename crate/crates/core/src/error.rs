use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("intensity value {0} outside 0..=1023")]
    IntensityOutOfRange(i64),

    #[error("window contains no samples")]
    EmptyWindow,

    #[error("timestamps out of order at sample {index}: {current} precedes {previous}")]
    Unordered {
        index: usize,
        previous: String,
        current: String,
    },

    #[error("invalid argument: {0}")]
    Domain(String),

    #[error("shape mismatch: expected {expected}, got {actual}")]
    Shape { expected: usize, actual: usize },

    #[error("insufficient data: need at least {needed} rows, got {got}")]
    InsufficientData { needed: usize, got: usize },

    #[error("non-finite value in input data")]
    NonFinite,

    #[error("component {0} has (near) zero variance and cannot be standardized")]
    DegenerateComponent(usize),

    #[error("cophenetic correlation undefined: zero variance in {0} distances")]
    UndefinedCcc(&'static str),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("need at least 2 reporting sensors for rain estimation, got {0}")]
    InsufficientSensors(usize),

    #[error("timelines are not aligned: {0}")]
    Misaligned(String),

    #[error("schema error on line {line}: {message}")]
    Schema { line: usize, message: String },

    #[error("parse error on line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("node {node} on {date}: {source}")]
    NodeDay {
        node: String,
        date: chrono::NaiveDate,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
