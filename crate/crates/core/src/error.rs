use thiserror::Error;

/// Every failure the library can report.
///
/// The variants are grouped loosely by the stage that produces them; the CLI
/// maps `Validation` to its configuration exit code and everything else to a
/// solver failure.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid input: {0}")]
    Validation(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },

    #[error("matrix is not symmetric: max |A_ij - A_ji| = {defect:e} exceeds {tol:e}")]
    NotSymmetric { defect: f64, tol: f64 },

    #[error("matrix is singular to working precision at pivot {pivot} (|pivot| = {magnitude:e})")]
    Singular { pivot: usize, magnitude: f64 },

    #[error("eigensolver did not converge after {sweeps} sweeps (off-diagonal norm {off_norm:e})")]
    EigenNoConvergence { sweeps: usize, off_norm: f64 },

    #[error(
        "Dirichlet fit residual {residual:e} for mode {mode} exceeds 1e-6 \
         (charge offset {offset}, regularization {lambda:e})"
    )]
    IllConditioned {
        mode: usize,
        residual: f64,
        offset: f64,
        lambda: f64,
    },

    #[error("first eigenvector is not sign-definite (min {min:e}, max {max:e})")]
    NotSignDefinite { min: f64, max: f64 },

    #[error("Newton iteration stalled after {iterations} iterations (residual {residual:e})")]
    NewtonStagnation { iterations: usize, residual: f64 },

    #[error("positivity lost: {0}")]
    PositivityLost(String),

    #[error("time step underflow at t = {time} (dt = {dt:e})")]
    StepUnderflow { time: f64, dt: f64 },

    #[error("not enough samples: need {needed}, have {available}")]
    InsufficientSamples { needed: usize, available: usize },

    #[error("spectrum has no positive eigenvalue")]
    NoPositiveEigenvalue,

    #[error("{0}")]
    Unsupported(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn validation(msg: impl Into<String>) -> Error {
    Error::Validation(msg.into())
}

pub(crate) fn check_len(expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, actual })
    }
}
