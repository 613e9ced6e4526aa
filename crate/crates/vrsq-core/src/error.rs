use alloc::string::String;
use core::fmt;

/// Errors raised by the physics and analysis routines.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// A parameter is outside its physical or mathematical domain.
    InvalidParameter(String),
    /// Mirror geometry cannot support a stable mode.
    Geometry(String),
    /// A fit could not be set up or the trace carries no signal.
    Fit(String),
    /// A least-squares design matrix is rank deficient.
    RankDeficient,
    /// A fit result was used downstream although it did not converge.
    NotConverged,
    /// The requested sequence has no closed-form noise expression.
    UnsupportedSequence(String),
    /// Too few samples for the requested statistic.
    InsufficientData { needed: usize, got: usize },
}

pub type Result<T> = core::result::Result<T, Error>;

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::InvalidParameter(s) => write!(f, "invalid parameter: {s}"),
            Error::Geometry(s) => write!(f, "geometry error: {s}"),
            Error::Fit(s) => write!(f, "fit error: {s}"),
            Error::RankDeficient => f.write_str("rank-deficient design matrix"),
            Error::NotConverged => f.write_str("fit did not converge"),
            Error::UnsupportedSequence(s) => write!(f, "no analytic noise model for sequence '{s}'"),
            Error::InsufficientData { needed, got } => {
                write!(f, "need at least {needed} samples, got {got}")
            }
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for Error {}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}
