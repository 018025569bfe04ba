use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Validation(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("degenerate configuration: {0}")]
    Degenerate(String),

    #[error("no model: {0}")]
    NoModel(String),

    #[error("alignment failed at frame {frame}: {detail}")]
    Alignment { frame: usize, detail: String },

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("malformed file {}: {detail}", path.display())]
    Format { path: PathBuf, detail: String },

    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("config: {0}")]
    Config(String),
}

impl Error {
    /// `true` for errors caused by bad input rather than a failed computation.
    pub fn is_validation(&self) -> bool {
        match self {
            Error::Validation(_)
            | Error::Shape(_)
            | Error::Alignment { .. }
            | Error::Format { .. }
            | Error::Io { .. }
            | Error::Json(_)
            | Error::Config(_) => true,
            Error::Degenerate(_) | Error::NoModel(_) => false,
            Error::Stage { source, .. } => source.is_validation(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, detail: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            detail: detail.into(),
        }
    }

    pub(crate) fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }
}
