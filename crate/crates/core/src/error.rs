use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("index out of range: {what} {index} not below {bound}")]
    IndexOutOfRange {
        what: &'static str,
        index: usize,
        bound: usize,
    },

    #[error("hash family of kind {actual} cannot produce {requested}")]
    WrongHashKind {
        requested: &'static str,
        actual: &'static str,
    },

    #[error("sketch parameters differ; only identically configured sketches can be merged")]
    ParameterMismatch,

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("too many rows: {rows} requested but dimension is {dim}")]
    TooManyRows { rows: usize, dim: usize },

    #[error("distribution undefined: {0}")]
    UndefinedDistribution(&'static str),

    #[error("enumeration too large: {0}")]
    SizeGuard(String),

    #[error("ran out of sampler banks: {needed} needed, {available} available; allocate more banks")]
    BankExhausted { needed: usize, available: usize },

    #[error("unsupported dimension {dim} (at most {max}); embed with jl_embed first (mode jl_then_exp_d)")]
    UnsupportedDimension { dim: usize, max: usize },

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("malformed sketch encoding: {0}")]
    Decode(String),
}
