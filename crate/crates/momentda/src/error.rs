use std::path::PathBuf;

/// Errors raised by the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("polynomial degree {m} is outside the supported range 1..={max}")]
    DegreeOutOfRange { m: usize, max: usize },

    #[error("point {x} lies outside [0,1]")]
    OutsideUnitInterval { x: f64 },

    #[error("quadrature order {n} is outside the supported range 2..=512")]
    QuadOrderOutOfRange { n: usize },

    #[error("integrand is not finite at node {node:?}")]
    NonFiniteIntegrand { node: Vec<f64> },

    #[error("quadrature did not self-converge: {coarse} at n={n} vs {fine} at n={}", 2 * n)]
    QuadratureNotConverged { n: usize, coarse: f64, fine: f64 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("monomial count overflows for m={m}, N={n}")]
    CountOverflow { m: usize, n: usize },

    #[error("density is not resolved by a grid of order {order}; raise the quadrature order")]
    GridUnresolved { order: usize },

    #[error("target density vanishes where the reference density has mass")]
    SupportViolation,

    #[error("moment vector is outside the realizable range (dimension {dim}, residual {residual:e}, Hessian condition {condition:e})")]
    Infeasible {
        dim: usize,
        residual: f64,
        condition: f64,
    },

    #[error("Newton iteration stopped after {iterations} steps with residual {residual:e}")]
    MaxIterations { iterations: usize, residual: f64 },

    #[error("cumulative distribution is not monotone at index {index}")]
    NonMonotoneCdf { index: usize },

    #[error("empty sample")]
    EmptySample,

    #[error("density is not a product of univariate factors")]
    NotProductForm,

    #[error("line {line}, column {column}: {message}")]
    Parse {
        line: u64,
        column: usize,
        message: String,
    },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}
