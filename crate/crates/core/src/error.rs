use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite value produced while generating {0}")]
    NonFiniteGeneration(&'static str),
    #[error("degenerate treatment: {0}")]
    DegenerateTreatment(&'static str),
    #[error("degenerate outcome: {0}")]
    DegenerateOutcome(&'static str),
    #[error("prior exhausted after {retries} resamples (last failure: {last})")]
    PriorExhausted { retries: usize, last: String },
    #[error("treatment value {0} outside [0, 1]")]
    TreatmentOutOfRange(f64),
    #[error("row {row} out of range for {rows} rows")]
    RowOutOfRange { row: usize, rows: usize },
    #[error("parse error at row {row}, column {column}: {message}")]
    Parse {
        row: usize,
        column: String,
        message: String,
    },
    #[error("table has no usable rows")]
    EmptyTable,
    #[error("header mismatch: {0}")]
    HeaderMismatch(String),
    #[error("grid mismatch: {0}")]
    GridMismatch(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("unknown scenario '{0}'")]
    UnknownScenario(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("non-finite training loss")]
    NonFiniteLoss,
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    /// Failures that trigger resampling of the whole DGP.
    pub fn is_degenerate(&self) -> bool {
        matches!(
            self,
            Error::NonFiniteGeneration(_)
                | Error::DegenerateTreatment(_)
                | Error::DegenerateOutcome(_)
        )
    }

    /// Process exit code: 2 for data errors, 3 for numeric/degeneracy failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::NonFiniteGeneration(_)
            | Error::DegenerateTreatment(_)
            | Error::DegenerateOutcome(_)
            | Error::PriorExhausted { .. }
            | Error::NonFiniteLoss => 3,
            Error::InvalidArgument(_) | Error::UnknownScenario(_) => 1,
            _ => 2,
        }
    }
}
