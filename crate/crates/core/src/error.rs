use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("k must exceed 1: there is no immersed hyperbolic k-bubble for k in (0,1]")]
    NoBubble,
    #[error("numeric fault: {0}")]
    Numeric(String),
    #[error("domain violation: {0}")]
    Domain(String),
    #[error("grid too coarse: {0}")]
    TooCoarse(String),
    #[error("ambiguous kernel: no gap between singular values {lo:e} and {hi:e}")]
    AmbiguousKernel { lo: f64, hi: f64 },
    #[error("no convergence: {0}")]
    NoConvergence(String),
    #[error("no critical point: {0}")]
    NoCriticalPoint(String),
    #[error("field lives on a different grid")]
    GridMismatch,
}

impl Error {
    /// Stable machine-readable class used by the CLI.
    pub fn class(&self) -> &'static str {
        match self {
            Error::Invalid(_) | Error::NoBubble | Error::GridMismatch => "config",
            Error::NoCriticalPoint(_) => "no_critical_point",
            _ => "numeric",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
