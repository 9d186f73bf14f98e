use thiserror::Error;

/// Failure modes shared by every module of the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("range error: {0}")]
    Range(String),
    #[error("integration failure: {0}")]
    Integration(String),
    #[error("solver error: {0}")]
    Solver(String),
    #[error("blow-up at t = {t}: {msg}")]
    BlowUp { t: f64, msg: String },
    #[error("modulation fit failed: {0}")]
    Fit(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Domain(msg.into()))
}
