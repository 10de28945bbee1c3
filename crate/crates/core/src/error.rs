use thiserror::Error;

/// Errors surfaced by the simulation and verification routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("site {0:?} lies outside the box")]
    SiteOutsideBox(Vec<i32>),

    #[error("hypothesis {hypothesis} violated: {detail}")]
    HypothesisViolated {
        hypothesis: &'static str,
        detail: String,
    },

    #[error("incompatible lattice geometry: {0}")]
    IncompatibleGeometry(String),

    #[error("singular system: {0}")]
    Singular(String),

    #[error("Lyapunov candidate refused: {0}")]
    CertificateRefused(String),

    #[error("insufficient separation: {0}")]
    InsufficientSeparation(String),

    #[error("moment blow-up: {0}")]
    MomentBlowUp(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Config(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}
