use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// `h'` diverges at a zero contribution, so the gradient is undefined.
    #[error("funding gradient is singular at citizen {index} (zero contribution)")]
    SingularGradient { index: usize },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("no convergence after {iterations} iterations: {reason}")]
    NoConvergence { iterations: usize, reason: String },

    #[error("second derivative vanishes at {at}")]
    DegenerateSecondDerivative { at: f64 },

    #[error("series order {order} is below the minimum of 4")]
    OrderTooLow { order: usize },
}
