use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[non_exhaustive]
pub enum Error {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    /// The insert would push the load factor past the configured maximum.
    #[error("capacity exceeded: load factor would pass the configured maximum")]
    CapacityExceeded,
    /// Shifting would run past the last physical slot.
    #[error("table full: shifting would run past the last slot")]
    TableFull,
    #[error("key not found")]
    NotFound,
    /// A run could not be decoded. Indicates corruption.
    #[error("malformed keepsake box encoding at slot {0}")]
    Malformed(usize),
    #[error("invalid serialized filter: {0}")]
    Format(String),
    #[error("i/o error: {0}")]
    Io(String),
    /// An operation needed slots outside the regions it had locked.
    /// Only seen inside the concurrent wrapper, which retries under the
    /// global lock.
    #[error("operation left its locked regions")]
    RegionConflict,
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
