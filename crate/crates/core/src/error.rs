//! Error taxonomy shared across the crate.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Malformed caller input: bad shapes, out-of-range indices, invalid
    /// parameter combinations.
    #[error("input error: {0}")]
    Input(String),

    /// Non-finite values produced where finite arithmetic was required.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// Structural mismatch between objects that must agree (table shapes,
    /// feature counts, vocabulary sizes).
    #[error("structural error: {0}")]
    Structural(String),

    /// A numerical routine cannot meet its accuracy contract with the
    /// requested discretization.
    #[error("precision error: {0}")]
    Precision(String),

    /// A search or calibration target is outside the representable range.
    #[error("range error: {0}")]
    Range(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }

    pub fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }

    pub fn structural(msg: impl Into<String>) -> Self {
        Error::Structural(msg.into())
    }

    pub fn precision(msg: impl Into<String>) -> Self {
        Error::Precision(msg.into())
    }

    pub fn range(msg: impl Into<String>) -> Self {
        Error::Range(msg.into())
    }

    pub fn parse(msg: impl Into<String>) -> Self {
        Error::Parse(msg.into())
    }
}
