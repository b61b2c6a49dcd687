use std::path::PathBuf;

use crate::models::svr::SvrModel;

/// Errors produced anywhere in the calibration pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{file}:{line}: {msg}")]
    Parse {
        file: PathBuf,
        line: usize,
        msg: String,
    },
    #[error("validation failed: {0}")]
    Validation(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("value outside domain: {0}")]
    Domain(String),
    #[error("degenerate feature: {0}")]
    DegenerateFeature(String),
    #[error("degenerate target: {0}")]
    DegenerateTarget(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("SMO did not converge after {iterations} iterations (KKT gap {gap:.3e})")]
    Convergence {
        iterations: usize,
        gap: f64,
        /// Best iterate reached before the iteration budget ran out.
        best: Box<SvrModel>,
    },
    #[error("Cholesky factorization failed ({0}); try raising alpha")]
    Cholesky(String),
    #[error("training failed: {0}")]
    Training(String),
    /// An error raised inside a named pipeline stage.
    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit status: 2 for configuration errors (including an
    /// unreadable or malformed configuration file), 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Stage { stage: "config", .. } => 2,
            Error::Stage { source, .. } => source.exit_code(),
            _ => 1,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
