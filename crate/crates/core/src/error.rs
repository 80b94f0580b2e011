use thiserror::Error;

pub type Result<T> = std::result::Result<T, LcnError>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LcnError {
    #[error("invalid architecture: {0}")]
    InvalidArchitecture(String),

    #[error("invalid filter: {0}")]
    InvalidFilter(String),

    #[error("size mismatch: expected {expected}, got {got}")]
    SizeMismatch { expected: usize, got: usize },

    #[error("degree mismatch: expected {expected}, got {got}")]
    DegreeMismatch { expected: usize, got: usize },

    #[error("dimension {d_in} minus filter size {k} is not divisible by stride {stride}")]
    IndivisibleDimension { d_in: usize, k: usize, stride: usize },

    #[error("filter size {k} exceeds signal length {d0}")]
    FilterTooLong { k: usize, d0: usize },

    #[error("zero polynomial has no well-defined roots")]
    ZeroPolynomial,

    #[error("polynomial must be monic (leading coefficient {0})")]
    NotMonic(f64),

    #[error("unsupported degree {0}")]
    UnsupportedDegree(usize),

    #[error("operation requires all strides equal to one")]
    StrideNotOne,

    #[error("singular matrix: {0}")]
    Singular(String),

    #[error("matrix is not symmetric positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("input is not approximately critical (squared gradient norm {0:e})")]
    NotCritical(f64),

    #[error("no admissible real solution: {0}")]
    NoAdmissibleSolution(String),

    #[error("zero filter in layer {0}")]
    ZeroFilter(usize),

    #[error("invalid partition: {0}")]
    InvalidPartition(String),

    #[error("no ED-degree entry for degree {degree} and partition {partition}")]
    UncoveredEdDegree { degree: usize, partition: String },

    #[error("parse error: {0}")]
    Parse(String),
}
