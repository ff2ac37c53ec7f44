//! Error type shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum QsdpError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("input kind mismatch: {0}")]
    KindMismatch(String),

    #[error(
        "weight {value} at ({row}, {col}) violates the {levels}-level quantization set \
         (|q| <= {max_level}, q = {max_level} mod 2)"
    )]
    InvalidQuantization {
        row: usize,
        col: usize,
        value: i64,
        levels: u32,
        max_level: u32,
    },

    #[error(
        "solver did not converge within {iterations} iterations \
         (primal residual {primal:.3e}, dual residual {dual:.3e})"
    )]
    SolverDidNotConverge {
        iterations: usize,
        primal: f64,
        dual: f64,
    },

    #[error("solution is not converged; refusing to report a lower bound")]
    NotConverged,

    #[error("shaping input is not feasible: smallest eigenvalue {lambda_min:.3e}")]
    InfeasibleShapingInput { lambda_min: f64 },

    #[error(
        "covariance completion stalled: off-diagonal gap {objective:.3e} after {iterations} \
         iterations"
    )]
    CompletionFailed { objective: f64, iterations: usize },

    #[error("training diverged at epoch {epoch} (last finite loss {last_loss:.6e})")]
    TrainingDiverged { epoch: usize, last_loss: f64 },

    #[error("dictionary oracle rejected d = {d}: {atom_estimate} sign-pair atoms exceed the cap")]
    OracleTooLarge { d: usize, atom_estimate: u128 },

    #[error("CSV parse error at row {row}, column {col}: {message}")]
    CsvCell {
        row: usize,
        col: String,
        message: String,
    },

    #[error("unknown label {label:?} at row {row}")]
    UnknownLabel { row: usize, label: String },

    #[error("file format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
