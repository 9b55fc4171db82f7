use thiserror::Error;

/// Crate-wide error type.
///
/// The CLI maps variants onto its stable exit codes: configuration and
/// contract violations are exit 2, I/O is exit 1, and everything that fails
/// inside a computation is exit 3.
#[derive(Debug, Error)]
pub enum Error {
    /// A configuration referenced an unknown node or pair, or a value was out
    /// of range.
    #[error("configuration error: {0}")]
    Config(String),

    /// An operation was called with inputs violating its contract (dimension
    /// mismatch, empty series, mismatched pair domains).
    #[error("contract violation: {0}")]
    Contract(String),

    /// The observation vector admits no nonnegative integer traffic
    /// assignment.
    #[error("infeasible observation: {0}")]
    InfeasibleObservation(String),

    /// Exact E-step enumeration exceeded its node budget; callers fall back
    /// to the IPF engine.
    #[error("enumeration budget exceeded: visited {visited} nodes, budget {budget}")]
    EnumerationBudget { visited: usize, budget: usize },

    /// An estimator failed (LP infeasibility, degenerate inputs).
    #[error("estimation failed: {0}")]
    Estimation(String),

    /// Threshold calibration was handed too few null statistics or a bad
    /// false-positive target.
    #[error("calibration error: {0}")]
    Calibration(String),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
