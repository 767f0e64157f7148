use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("nearest-point search supports general generators only up to dimension 8 (got {0})")]
    UnsupportedDimension(usize),

    #[error("generator matrix is singular (Hadamard ratio {0:e})")]
    SingularGenerator(f64),

    #[error("target second moment must be positive (got {0})")]
    NonPositiveTarget(f64),

    #[error("second moment of a non-diagonal lattice is unknown; estimate it first")]
    MomentUnknown,

    #[error("{0} is not prime")]
    InvalidPrime(u64),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("lattices are not nested")]
    NotNested,

    #[error("nesting index {index} exceeds the enumeration limit {limit}")]
    TooManyCosets { index: u64, limit: u64 },

    #[error("invalid source model: {0}")]
    InvalidModel(String),

    #[error("invalid partition plan: {0}")]
    InvalidPlan(String),

    #[error("observation Gram matrix is singular (reciprocal condition {0:e})")]
    SingularObservationGram(f64),

    #[error("distortion {d} outside the valid range {range}")]
    DistortionOutOfRange { d: f64, range: String },

    #[error("q must be positive (got q1 = {q1}, q2 = {q2})")]
    NonPositiveQ { q1: f64, q2: f64 },

    #[error("q1 = {q1} outside the valid interval (0, {upper})")]
    QOutOfRange { q1: f64, upper: f64 },

    #[error("side information determines the function (innovations variance {0:e})")]
    DegenerateSideInfo(f64),

    #[error("scaling vector is orthogonal to the function (c Sigma eta^T = 0)")]
    OrthogonalScaling,
}
