use thiserror::Error;

use crate::field::Shape;

#[derive(Debug, Error)]
pub enum Error {
    #[error("grid too small: need at least {need} nodes per axis, got {got}")]
    GridTooSmall { need: usize, got: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("operands live on different grids")]
    GridMismatch,
    #[error("shape mismatch: expected {expected:?}, got {got:?}")]
    ShapeMismatch { expected: Shape, got: Shape },
    #[error("frequency {lambda} is unresolved on spacing {h}: lambda*h = {product:.4} exceeds {max}")]
    Nyquist {
        lambda: f64,
        h: f64,
        product: f64,
        max: f64,
    },
    #[error("mollifier scale {l} is below two grid spacings (h = {h})")]
    KernelUnresolved { l: f64, h: f64 },
    #[error("insufficient margin: need {needed}, have {available}")]
    InsufficientMargin { needed: f64, available: f64 },
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error("linear solver failure: {0}")]
    Solver(String),
    #[error("amplitude guard still violated after {retries} constant doublings")]
    GuardTripped { retries: usize },
    #[error("{what} residual {residual:e} exceeds tolerance {tolerance:e}")]
    IdentityViolated {
        what: String,
        residual: f64,
        tolerance: f64,
    },
    #[error("non-finite value produced by {0}")]
    NonFinite(String),
    #[error("iteration {iteration}: {source}")]
    Stage {
        iteration: usize,
        #[source]
        source: Box<Error>,
    },
    #[error("schedule check failed: {0}")]
    Schedule(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
