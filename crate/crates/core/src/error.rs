//! Error type shared by every stage of the pipeline.

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Coarse failure class, used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Validation,
    Ingestion,
    Numerical,
    Internal,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Validation(String),

    #[error("shape mismatch: expected {expected} values, got {actual}")]
    Shape { expected: usize, actual: usize },

    #[error("column `{0}` not found in header")]
    MissingColumn(String),

    #[error("non-numeric cell {value:?} at row {row}, column `{column}`")]
    NonNumeric {
        row: usize,
        column: String,
        value: String,
    },

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("design matrix is rank deficient: column `{column}` is linearly dependent on earlier columns")]
    SingularFit { column: String },

    #[error("degenerate data: {0}")]
    Degenerate(String),

    #[error(
        "MAP search failed: none of {n_runs} runs converged (best unconverged log-posterior {best_value})"
    )]
    SearchFailure { n_runs: usize, best_value: f64 },

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Validation(_) | Error::Shape { .. } => ErrorClass::Validation,
            Error::MissingColumn(_)
            | Error::NonNumeric { .. }
            | Error::EmptyInput(_)
            | Error::Csv(_)
            | Error::Io(_)
            | Error::Json(_) => ErrorClass::Ingestion,
            Error::SingularFit { .. } | Error::Degenerate(_) | Error::SearchFailure { .. } => {
                ErrorClass::Numerical
            }
            Error::Stage { source, .. } => source.class(),
        }
    }
}

/// Tags errors with the name of the pipeline stage that produced them.
pub trait StageExt<T> {
    fn stage(self, stage: &'static str) -> Result<T>;
}

impl<T> StageExt<T> for Result<T> {
    fn stage(self, stage: &'static str) -> Result<T> {
        self.map_err(|e| Error::Stage {
            stage,
            source: Box::new(e),
        })
    }
}

pub(crate) fn check_len(expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::Shape { expected, actual })
    }
}
