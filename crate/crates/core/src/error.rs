use std::path::PathBuf;

/// Errors raised by the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("matrix is not positive definite")]
    NotPositiveDefinite,

    #[error("degenerate scale estimate {0:e}")]
    DegenerateScale(f64),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("{0}")]
    Failed(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Parse { path: String, line: u64, message: String },
}

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter { name, reason: reason.into() }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Per-site failure codes for batch predictors. Batches never abort on these.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SiteError {
    /// No training points qualified as neighbors.
    EmptyNeighborhood,
    /// The local covariance could not be factorized, even with jitter.
    Singular,
    /// The local responses carry no variation (scale estimate collapsed).
    Degenerate,
    /// Any other local failure.
    Failed,
}

impl SiteError {
    /// Stable integer code written to prediction files. Zero means success.
    pub fn code(self) -> u8 {
        match self {
            SiteError::EmptyNeighborhood => 1,
            SiteError::Singular => 2,
            SiteError::Degenerate => 3,
            SiteError::Failed => 4,
        }
    }

    pub(crate) fn from_error(e: &Error) -> Self {
        match e {
            Error::NotPositiveDefinite => SiteError::Singular,
            Error::DegenerateScale(_) => SiteError::Degenerate,
            Error::InsufficientData(_) => SiteError::EmptyNeighborhood,
            _ => SiteError::Failed,
        }
    }
}
