use thiserror::Error;

/// Errors raised by the numerical and simulation layers.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the domain where the quantity is defined.
    #[error("domain error: {0}")]
    Domain(String),
    /// Inconsistent or incomplete configuration (missing table, bad grid, ...).
    #[error("configuration error: {0}")]
    Config(String),
    /// A numerical routine failed to reach its tolerance.
    #[error("numerical error: {0}")]
    Numerical(String),
    /// Evaluation of a kernel at its singular point.
    #[error("singular evaluation: {0}")]
    Singular(String),
    /// A simulation was stopped by a guard (population cap, ...).
    #[error("simulation aborted: {0}")]
    Aborted(String),
    /// Malformed binary or text input.
    #[error("format error: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Domain(msg.into()))
}

pub(crate) fn config<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Config(msg.into()))
}
