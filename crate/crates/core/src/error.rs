use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("power iteration did not converge after {iterations} iterations (last change {last_change:e})")]
    PowerIteration { iterations: usize, last_change: f64 },

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("training diverged at iteration {iteration} (loss {loss})")]
    TrainingDiverged {
        iteration: usize,
        loss: f64,
        /// Last parameter vector with a finite loss.
        last_theta: Vec<f64>,
    },

    #[error("simulation diverged at t = {t:.3} s after {steps} steps")]
    SimulationDiverged {
        t: f64,
        steps: usize,
        partial: Box<crate::sim::RolloutTrace>,
    },

    #[error("demonstration collection failed: {0}")]
    CollectionFailed(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub(crate) fn check_dim(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            what,
            expected,
            got,
        })
    }
}
