use thiserror::Error;

/// Errors raised anywhere in the toolkit.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum FhError {
    #[error("parse error on line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("area `{0}` has a non-positive sampling variance")]
    NonPositiveVariance(String),

    #[error("design matrix is rank deficient")]
    RankDeficientDesign,

    #[error("need at least r + 2 = {needed} areas, got {k}")]
    TooFewAreas { k: usize, needed: usize },

    #[error("X'D^-1 X is not positive definite")]
    SingularSystem,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("area index {index} out of range for {k} areas")]
    AreaIndex { index: usize, k: usize },

    #[error("objective is maximised at the upper search bound a_max = {a_max}; raise a_max")]
    NoInteriorMax { a_max: f64 },

    #[error("posterior of A is improper: k - r = {df} with prior exponent {exponent}")]
    ImproperPosterior { df: usize, exponent: f64 },

    #[error("quadrature did not converge after {panels} panels (estimated error {error:e})")]
    QuadratureNotConverged { panels: usize, error: f64 },

    #[error("adjusted density has no interior maximum on (0, 1)")]
    AdjustedModeNotInterior,

    #[error("adjusted log-density is not concave at its mode (curvature {0})")]
    NegativeCurvature(f64),

    #[error("variance component estimate is zero; bootstrap pivot is undefined")]
    ZeroVarianceEstimate,

    #[error("{failed} of {reps} bootstrap replicates failed (limit 1%)")]
    TooManyFailedReplicates { failed: usize, reps: usize },
}

pub type Result<T> = std::result::Result<T, FhError>;
