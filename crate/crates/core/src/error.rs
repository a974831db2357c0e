use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("unsupported expansion order {0} (supported: 0, 1, 2)")]
    UnsupportedOrder(usize),

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("degenerate distribution: c2 + sqrt(c4) = 0, truncation range is empty")]
    DegenerateDistribution,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("Picard iteration does not contract: dt * theta1 * L = {product:.6} (must be < 1)")]
    PicardNonContraction { product: f64 },

    #[error("Picard iterates diverge at step {step}: dt * theta1 * L = {product:.6}")]
    PicardDivergence { step: usize, product: f64 },

    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),

    #[error("invalid payoff: {0}")]
    InvalidPayoff(String),

    #[error("invalid driver: {0}")]
    InvalidDriver(String),

    #[error("regression failure: {0}")]
    Regression(String),

    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
