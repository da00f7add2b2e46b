//! Error taxonomy shared across the crate.
//!
//! The variants map one-to-one onto the CLI exit codes: validation (2),
//! convergence (3), positivity (4), I/O (5). Numeric failures (e.g. a
//! product-limit factor dropping below zero) are grouped with convergence
//! since both signal that a working model does not fit the data.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Malformed input: bad event codes, missing columns, invalid options.
    #[error("validation: {0}")]
    Validation(String),

    /// A nuisance model failed to converge or its information matrix is singular.
    #[error("convergence failure in {model}: {reason}")]
    Convergence { model: String, reason: String },

    /// A numeric guard tripped during estimation.
    #[error("numeric: {0}")]
    Numeric(String),

    /// Division by a near-zero survival probability was about to happen.
    #[error("positivity: {0}")]
    Positivity(String),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub fn convergence(model: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Convergence {
            model: model.into(),
            reason: reason.into(),
        }
    }

    /// Exit code for the CLI: 2 validation, 3 convergence/numeric, 4 positivity, 5 I/O.
    pub fn exit_code(&self) -> u8 {
        match self {
            Error::Validation(_) => 2,
            Error::Convergence { .. } | Error::Numeric(_) => 3,
            Error::Positivity(_) => 4,
            Error::Io(_) | Error::Csv(_) => 5,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_code_taxonomy() {
        assert_eq!(Error::validation("x").exit_code(), 2);
        assert_eq!(Error::convergence("m", "r").exit_code(), 3);
        assert_eq!(Error::Numeric("x".into()).exit_code(), 3);
        assert_eq!(Error::Positivity("x".into()).exit_code(), 4);
        let io = Error::Io(std::io::Error::new(std::io::ErrorKind::NotFound, "gone"));
        assert_eq!(io.exit_code(), 5);
    }
}
