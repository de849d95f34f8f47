use thiserror::Error;

use crate::problem::PrimalDualTrajectory;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    Dimension {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("non-finite value from {oracle} at output index {index}")]
    Evaluation { oracle: &'static str, index: usize },

    #[error(
        "Newton method did not converge after {iterations} iterations (residual {residual:.3e})"
    )]
    NonConvergence {
        iterations: usize,
        residual: f64,
        last: Box<PrimalDualTrajectory>,
    },

    #[error("KKT system is not regular: {0}")]
    Regularity(String),

    #[error("range condition violated: residual {residual:.3e} exceeds {tolerance:.1e}")]
    RangeCondition { residual: f64, tolerance: f64 },

    #[error("model singularity: {0}")]
    Singularity(String),

    #[error("decay fit failed: {0}")]
    Fit(String),
}

pub(crate) fn check_len(context: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::Dimension {
            context,
            expected,
            actual,
        })
    }
}
