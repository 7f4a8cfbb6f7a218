//! Crate-wide error type.

use std::path::PathBuf;

use thiserror::Error;

use crate::expr::ExprError;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Expr(#[from] ExprError),

    #[error("invalid geometry: {0}")]
    Geometry(String),

    #[error("meshing failed: {0}")]
    Mesh(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("not implemented: {0}")]
    Unimplemented(String),

    #[error("singular system: {0}")]
    Singular(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
