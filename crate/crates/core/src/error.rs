//! Error type shared by every module of the crate.

use thiserror::Error;

/// Failures raised by the numerical routines.
#[derive(Debug, Error)]
pub enum Error {
    /// Operand shapes do not fit together.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// A square matrix was required.
    #[error("matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },

    /// An input or intermediate contained NaN or infinity.
    #[error("non-finite entry encountered in {0}")]
    NonFinite(&'static str),

    /// Column rank below the requested number of columns.
    #[error("rank deficient: smallest singular value {sigma:e} is not above {threshold:e}")]
    RankDeficient { sigma: f64, threshold: f64 },

    /// Hermitian input expected.
    #[error("matrix is not Hermitian (asymmetry {asymmetry:e}, tolerance {tolerance:e})")]
    NotHermitian { asymmetry: f64, tolerance: f64 },

    /// Cholesky failed on a Gram matrix that should be positive definite.
    #[error("Gram matrix is not positive definite (singular or numerically broken step operator)")]
    GramBreakdown,

    /// Image of a vector collapsed to (numerically) zero.
    #[error("vector image vanished (norm {0:e})")]
    Degenerate(f64),

    /// A scalar parameter is outside its admissible range.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// A documented precondition does not hold.
    #[error("precondition violated: {0}")]
    Precondition(String),

    /// A failure inside a trajectory, tagged with the step at which it happened.
    #[error("step {step}: {source}")]
    AtStep {
        step: u64,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    /// Attach a step index to an error raised inside a trajectory loop.
    pub fn at_step(self, step: u64) -> Self {
        Error::AtStep {
            step,
            source: Box::new(self),
        }
    }
}

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
