use thiserror::Error;

/// Errors produced by the signal, plant, regression and iteration layers.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum ImlError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("signal length {0} is not a positive even number")]
    OddLength(usize),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("spectrum is not Hermitian: imaginary part {im:e} at {bin} bin")]
    NotHermitian { bin: &'static str, im: f64 },

    #[error("transfer function vanishes at omega = {omega} rad/s (|g| = {magnitude:e})")]
    SingularResponse { omega: f64, magnitude: f64 },

    #[error("matrix is not positive definite (pivot {pivot} = {value:e})")]
    NotPositiveDefinite { pivot: usize, value: f64 },

    #[error("degenerate regression dataset: {0}")]
    DegenerateDataset(String),

    #[error("no model data available")]
    NoModel,

    #[error("zero model: no update possible at this frequency")]
    ZeroModel,

    #[error("desired output is identically zero")]
    ZeroReference,

    #[error("iteration {iteration}: {source}")]
    AtIteration {
        iteration: usize,
        #[source]
        source: Box<ImlError>,
    },
}

impl ImlError {
    pub(crate) fn at(self, iteration: usize) -> Self {
        match self {
            e @ ImlError::AtIteration { .. } => e,
            e => ImlError::AtIteration {
                iteration,
                source: Box::new(e),
            },
        }
    }
}

pub type Result<T> = std::result::Result<T, ImlError>;
