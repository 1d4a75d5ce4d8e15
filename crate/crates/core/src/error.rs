use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("config error: {0}")]
    Config(String),

    #[error("{path}: line {line}: {msg}")]
    Parse { path: PathBuf, line: usize, msg: String },

    #[error("invalid data: {0}")]
    Data(String),

    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    #[error("thin-plate system is singular ({0}); use a regularization > 0")]
    SingularSystem(String),

    #[error("shape mismatch in {what}: expected {expected:?}, got {got:?}")]
    Shape { what: &'static str, expected: Vec<usize>, got: Vec<usize> },

    #[error("forward bundle is missing `{0}`")]
    MissingEntry(String),

    #[error("non-finite loss at step {step}\n{dump}")]
    NonFinite { step: u64, dump: String },

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}: {source}", path.display())]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("checkpoint {}: {msg}", path.display())]
    Checkpoint { path: PathBuf, msg: String },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Parse { .. }
            | Error::Data(_)
            | Error::DegenerateGeometry(_)
            | Error::Shape { .. }
            | Error::MissingEntry(_)
            | Error::Io { .. }
            | Error::Image { .. }
            | Error::Checkpoint { .. } => 3,
            Error::SingularSystem(_) | Error::NonFinite { .. } | Error::Numeric(_) => 4,
        }
    }
}
