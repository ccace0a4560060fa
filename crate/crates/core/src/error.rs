use thiserror::Error;

/// Errors raised anywhere in the toolkit.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid group presentation: {0}")]
    InvalidGroup(String),
    #[error("point belongs to a different group (expected {expected} coordinates, got {got})")]
    GroupMismatch { expected: usize, got: usize },
    #[error("dilation factor must be positive, got {0}")]
    NonPositiveDilation(f64),
    #[error("field is not finite near the evaluation point")]
    NonFiniteField,
    #[error("evaluation at the kernel singularity")]
    Singularity,
    #[error("quadrature did not converge (residual {residual:e})")]
    QuadratureFailure { residual: f64 },
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("tiling overlap test failed between tiles {first} and {second} (overlap {overlap:e})")]
    TileOverlap {
        first: String,
        second: String,
        overlap: f64,
    },
    #[error("invalid tile word: {0}")]
    InvalidWord(String),
    #[error("dyadic content vanishes; no Frostman measure exists")]
    ZeroContent,
    #[error("exponent {value} outside the admissible range {range}")]
    ExponentOutOfRange { value: f64, range: String },
    #[error("only the sub-Laplacian (lambda = 2) is instantiated, got lambda = {0}")]
    UnsupportedOrder(f64),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
