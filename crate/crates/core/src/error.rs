use thiserror::Error;

/// Errors reported by the solver library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid dimensions: {0}")]
    InvalidDimensions(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed input: {0}")]
    Format(String),

    #[error("internal error: {0}")]
    Internal(String),
}

impl Error {
    /// Process exit code for this error class: 1 validation, 2 I/O, 3 internal.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidDimensions(_)
            | Error::ShapeMismatch(_)
            | Error::InvalidParameter(_)
            | Error::Format(_) => 1,
            Error::Io { .. } => 2,
            Error::Internal(_) => 3,
        }
    }

    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
