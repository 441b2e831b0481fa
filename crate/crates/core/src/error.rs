use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("shape mismatch: expected length {expected}, got {actual}")]
    ShapeMismatch { expected: usize, actual: usize },

    #[error("singular banded system: zero pivot at row {row}")]
    SingularMatrix { row: usize },

    #[error("mode k = 0 is not supported here; use the zero-mode operator")]
    ZeroMode,

    #[error("insufficient grid resolution: {0}")]
    InsufficientResolution(String),

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("Riccati reconstruction failed: K crossed zero near r = {location}")]
    RiccatiCrossing { location: f64 },

    #[error("missing stream data for mode {0}")]
    MissingStream(i32),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_len(expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(Error::ShapeMismatch { expected, actual });
    }
    Ok(())
}
