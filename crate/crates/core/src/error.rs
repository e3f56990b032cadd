use std::fmt;

/// Errors surfaced by the engine.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Tensor extents do not line up for the requested operation.
    Shape(String),
    /// An argument is outside its valid range.
    Arg(String),
    /// A class index or table index is out of range.
    Index(String),
    /// A file does not match its declared binary format.
    Format(String),
    /// Underlying I/O failure (path and OS message).
    Io(String),
    /// Configuration text could not be interpreted.
    Config(String),
    /// An API was called in the wrong order or on the wrong model kind.
    State(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Shape(m) => write!(f, "shape error: {m}"),
            Error::Arg(m) => write!(f, "invalid argument: {m}"),
            Error::Index(m) => write!(f, "index error: {m}"),
            Error::Format(m) => write!(f, "format error: {m}"),
            Error::Io(m) => write!(f, "io error: {m}"),
            Error::Config(m) => write!(f, "config error: {m}"),
            Error::State(m) => write!(f, "state error: {m}"),
        }
    }
}

impl std::error::Error for Error {}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
