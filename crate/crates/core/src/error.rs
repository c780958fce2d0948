//! Error types shared across the crate.

use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A column named in the schema is missing from the CSV header.
    #[error("schema error: {0}")]
    Schema(String),

    /// A data row failed validation. `row` is the 1-based data row index
    /// (header excluded).
    #[error("row {row}: {message}")]
    Row { row: usize, message: String },

    /// Invalid parameter value supplied by the caller.
    #[error("invalid parameter: {0}")]
    Parameter(String),

    /// Cut-point construction failed.
    #[error("{0}")]
    CutPoints(String),

    /// A subject's exit time lies beyond the last cut-point.
    #[error("subject {subject}: exit time {time} exceeds last cut-point {max}")]
    Coverage {
        subject: String,
        time: f64,
        max: f64,
    },

    /// Non-positive hazard where a positive rate is required.
    #[error("non-positive hazard {value} at row {row}")]
    NonPositiveHazard { row: usize, value: f64 },

    /// Feature schemas of two datasets do not match.
    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),

    /// A categorical feature value was not seen at training time.
    #[error("unknown category code {code} for feature '{feature}'")]
    UnknownCategory { feature: String, code: f64 },

    /// Model fitting failed to converge or the system is singular.
    #[error("fit error: {0}")]
    Fit(String),

    /// The censoring survival estimate is zero where a weight is needed.
    #[error("censoring weight degenerate at t = {0}")]
    DegenerateWeight(f64),

    /// Metric preconditions not met (no events, no comparable pairs, ...).
    #[error("metric error: {0}")]
    Metric(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}
