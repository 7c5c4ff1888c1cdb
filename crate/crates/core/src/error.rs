use thiserror::Error;

use crate::xql::TraceRecord;

pub type Result<T> = std::result::Result<T, XqlError>;

#[derive(Debug, Error)]
pub enum XqlError {
    /// An input lies outside the domain of the function (non-finite values, bad support).
    #[error("domain error: {0}")]
    Domain(String),

    /// A caller-supplied argument violates a precondition.
    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("degenerate sample: {0}")]
    DegenerateSample(String),

    /// Root finding or a search failed to converge.
    #[error("convergence failure: {0}")]
    Convergence(String),

    /// Fixed-point iteration hit its cap before reaching the tolerance.
    #[error("no convergence after {iterations} iterations (residual {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },

    /// Training loss exploded or became non-finite.
    #[error("training diverged at step {step} (loss {loss:e})")]
    Divergence {
        step: usize,
        loss: f64,
        last_checkpoint: Option<TraceRecord>,
    },

    #[error("parse error at line {line}{}: {message}", column.map(|c| format!(", column {c}")).unwrap_or_default())]
    Parse {
        line: usize,
        column: Option<usize>,
        message: String,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl XqlError {
    /// True for the training/iteration failures the CLI reports with exit code 2.
    pub fn is_numerical_failure(&self) -> bool {
        matches!(
            self,
            XqlError::Divergence { .. } | XqlError::NonConvergence { .. } | XqlError::Convergence(_)
        )
    }
}

pub(crate) fn ensure_beta(beta: f64) -> Result<()> {
    if beta.is_finite() && beta > 0.0 {
        Ok(())
    } else {
        Err(XqlError::Argument(format!("beta must be positive and finite, got {beta}")))
    }
}
