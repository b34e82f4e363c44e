use std::fmt;
use std::io;

/// Result alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

/// Errors emitted by tensors, model modules, the data pipeline and the
/// training harness.
#[derive(Debug)]
pub enum Error {
    /// A tensor or layer received data whose shape does not fit.
    Dimension(String),
    /// A module was configured with incompatible settings (head counts,
    /// widths, toggles).
    Config(String),
    /// An input value lies outside the operation's domain.
    Domain(String),
    /// A precondition on an operation's arguments was violated.
    Precondition(String),
    /// A dataset, manifest or checkpoint is internally inconsistent.
    Integrity(String),
    /// A file does not follow its declared wire format.
    Format(String),
    /// The gradient oracle cannot trust its inputs (e.g. a loss closure
    /// that returns different values on identical state).
    OracleInvalid(String),
    /// A non-finite value surfaced where the pipeline requires finite math.
    NonFinite(String),
    Io(io::Error),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Dimension(m) => write!(f, "dimension error: {m}"),
            Error::Config(m) => write!(f, "configuration error: {m}"),
            Error::Domain(m) => write!(f, "domain error: {m}"),
            Error::Precondition(m) => write!(f, "precondition violated: {m}"),
            Error::Integrity(m) => write!(f, "integrity error: {m}"),
            Error::Format(m) => write!(f, "format error: {m}"),
            Error::OracleInvalid(m) => write!(f, "oracle invalid: {m}"),
            Error::NonFinite(m) => write!(f, "non-finite value: {m}"),
            Error::Io(e) => write!(f, "io error: {e}"),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io(e) => Some(e),
            _ => None,
        }
    }
}

impl From<io::Error> for Error {
    fn from(e: io::Error) -> Self {
        Error::Io(e)
    }
}
