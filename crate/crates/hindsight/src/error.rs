//! Unified error type for the toolkit.
//!
//! Recoverable failures driven by user input (configs, files, numeric
//! breakdown during training) are reported through [`Error`]. Violations of
//! internal call contracts (mismatched tensor shapes handed between modules,
//! out-of-range indices) panic with a descriptive message instead, since they
//! indicate a bug rather than bad input.

use thiserror::Error;

/// Toolkit-wide error.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid or inconsistent configuration (bad values, unknown keys,
    /// impossible combinations such as grid-based prioritization on an
    /// environment without a 2D goal space).
    #[error("config error: {0}")]
    Config(String),

    /// Dimension or architecture mismatch between values that must agree.
    #[error("shape error: {0}")]
    Shape(String),

    /// Non-finite parameters, gradients, or losses; the run aborts with a
    /// diagnostic rather than training on garbage.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// Malformed file contents: checkpoints, CSV dumps, grid files.
    #[error("parse error: {0}")]
    Parse(String),

    /// Underlying filesystem failure.
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// Convenience alias used across the crate.
pub type Result<T> = std::result::Result<T, Error>;
