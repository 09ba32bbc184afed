//! Error type shared by every module.

use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Malformed or out-of-domain input (bad matrix, point outside the torus, empty sample...).
    #[error("invalid input: {0}")]
    Input(String),

    /// A configuration that violates a modeling precondition.
    #[error("configuration error: {0}")]
    Config(String),

    #[error("high-regularity condition fails: k = {k} must exceed 2 - alpha + d/2 = {bound}")]
    Regularity { k: f64, bound: f64 },

    #[error("degenerate generator: {0}")]
    DegenerateGenerator(String),

    #[error("training failed: {0}")]
    Training(String),

    /// Dudley integral with entropy exponent s >= 2 does not converge at 0.
    #[error("divergent entropy integral: exponent s = {0} must be below 2")]
    DivergentIntegral(f64),

    /// A measured inequality failed beyond its tolerance.
    #[error("audit failed: {0}")]
    Audit(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// True for errors caused by user-supplied input or configuration.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            Error::Input(_) | Error::Config(_) | Error::Regularity { .. } | Error::Parse { .. } | Error::Io { .. }
        )
    }
}
