use thiserror::Error;

/// Errors produced by the toolkit. Variants are grouped by where they
/// surface so callers (notably the CLI) can map them to stable exit codes.
#[derive(Debug, Error)]
pub enum Error {
    /// A required column is missing from the CSV header.
    #[error("schema error: missing column '{column}'")]
    Schema { column: String },

    /// A cell failed to parse as a number.
    #[error("parse error at data row {row}, column '{column}': cannot parse '{value}' as a number")]
    Parse {
        row: usize,
        column: String,
        value: String,
    },

    /// A value violates a domain constraint (e.g. treatment outside {0,1}).
    #[error("domain error at data row {row}, column '{column}': {message}")]
    Domain {
        row: usize,
        column: String,
        message: String,
    },

    /// A (treatment, outcome) stratum is too small to split.
    #[error("stratification error: stratum (treatment={treatment}, outcome={outcome}) has {count} member(s), need at least 2")]
    Stratification {
        treatment: u8,
        outcome: u8,
        count: usize,
    },

    /// Invalid hyperparameter or argument.
    #[error("parameter error: {0}")]
    Parameter(String),

    /// Model fitting cannot proceed (single-arm data, degenerate target, ...).
    #[error("fit error: {0}")]
    Fit(String),

    /// Input dimensions disagree with what a model was trained on.
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    Dimension { expected: usize, actual: usize },

    /// Evaluation cannot produce a meaningful result.
    #[error("evaluation error: {0}")]
    Evaluation(String),

    /// Invalid or inconsistent run configuration.
    #[error("config error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
