//! Unified error type for the library.

use thiserror::Error;

/// Errors surfaced by any operation in the library.
#[derive(Debug, Error)]
pub enum Error {
    /// Shapes or extents do not line up (matmul inner dims, empty softmax, ...).
    #[error("dimension error: {0}")]
    Dimension(String),

    /// A caller-facing contract was violated (non-scalar loss, step index out
    /// of range, missing standardization statistics, ...).
    #[error("contract error: {0}")]
    Contract(String),

    /// Invalid configuration value or unparseable config text.
    #[error("config error: {0}")]
    Config(String),

    /// Training failed numerically; carries context such as the offending
    /// parameter name or the step at which the loss became non-finite.
    #[error("training error: {0}")]
    Training(String),

    /// A scenario profile is inconsistent (tap delay outside the band, ...).
    #[error("profile error: {0}")]
    Profile(String),

    /// Feature extraction cannot proceed (all-zero channel, ...).
    #[error("feature error: {0}")]
    Feature(String),

    /// Dataset split is impossible (a scenario with fewer than 2 samples, ...).
    #[error("split error: {0}")]
    Split(String),

    /// A dataset or checkpoint file is malformed.
    #[error("format error: {0}")]
    Format(String),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
