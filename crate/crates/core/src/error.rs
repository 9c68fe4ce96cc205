use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("failure rate for cause {cause} overflows (θ_r1·x = {exponent})")]
    RateOverflow { cause: u8, exponent: f64 },

    #[error("model is not identified: {0}")]
    Unidentified(String),

    #[error("objective is infinite at every starting point")]
    InfiniteObjective,

    #[error("cell probability is zero in condition {condition} (cause index {cell}) with negative exponent")]
    SingularCell { condition: usize, cell: usize },

    #[error("matrix is singular or ill-conditioned (condition number {condition_number:e})")]
    IllConditioned { condition_number: f64 },

    #[error("alternative is degenerate: θ* lies on the null manifold (ℓ = {ell:e}, σ² = {sigma2:e})")]
    DegenerateAlternative { ell: f64, sigma2: f64 },

    #[error("pilot fit failed: {0}")]
    PilotFailed(Box<Error>),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }

    /// True for errors that come from bad inputs rather than numerics.
    pub fn is_validation(&self) -> bool {
        matches!(self, Error::Invalid(_) | Error::Unidentified(_))
    }
}
