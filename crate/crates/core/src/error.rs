use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Errors raised by the library.
///
/// `Config` and `InvalidInput` are caller mistakes (bad parameters, bad
/// files); the remaining variants are failures of a run on otherwise valid
/// input.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },

    #[error("malformed header: {0}")]
    MalformedHeader(String),

    #[error("no valid rows in {0}")]
    NoValidRows(PathBuf),

    #[error("case base is frozen")]
    Frozen,

    #[error("case base is not frozen (normalization not fitted)")]
    NotFrozen,

    #[error("duplicate case id `{0}`")]
    DuplicateId(String),

    #[error("empty {0}")]
    Empty(&'static str),

    #[error("zero variance in distance feature `{0}`")]
    ZeroVariance(&'static str),

    #[error("no weekly statistics for week {week}{}", year.map(|y| format!(" of {y}")).unwrap_or_default())]
    UnknownWeek { week: u32, year: Option<i32> },

    #[error("probe `{0}` is a climate outlier")]
    ProbeIsOutlier(String),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn csv(path: impl Into<PathBuf>, source: csv::Error) -> Self {
        Error::Csv {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by the caller's parameters or inputs rather
    /// than by a failure during the run.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Config(_) | Error::InvalidInput(_) | Error::MalformedHeader(_)
        )
    }
}
