//! Error type shared across the toolkit.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse failure at {context}: {message}")]
    ParseFailure { context: String, message: String },

    #[error("hyperedge {index} is empty")]
    EmptyHyperedge { index: usize },

    #[error("label {label} out of range [0,{num_classes}) at node {node}")]
    LabelOutOfRange {
        node: usize,
        label: i64,
        num_classes: usize,
    },

    #[error("inconsistent dimensions at {context}: expected {expected}, got {got}")]
    InconsistentDimensions {
        context: String,
        expected: usize,
        got: usize,
    },

    #[error("hyperedge {index} has zero degree")]
    DegenerateDegree { index: usize },

    #[error("class {class} has {count} nodes, need at least 3 to stratify")]
    CannotStratify { class: usize, count: usize },

    #[error("shape mismatch in {op}: ({a_rows}x{a_cols}) vs ({b_rows}x{b_cols})")]
    ShapeMismatch {
        op: &'static str,
        a_rows: usize,
        a_cols: usize,
        b_rows: usize,
        b_cols: usize,
    },

    #[error("backward requires a scalar loss, got {rows}x{cols}")]
    NonScalarLoss { rows: usize, cols: usize },

    #[error("lambda must be positive, got {0}")]
    InvalidLambda(f64),

    #[error("spectral oracle limited to {cap} nodes, got {n}")]
    OracleTooLarge { n: usize, cap: usize },

    #[error("need at least {num_classes} synthetic nodes, ratio gives {n_prime}")]
    TooFewSyntheticNodes { n_prime: usize, num_classes: usize },

    #[error("class prototype {class} has zero norm")]
    DegeneratePrototype { class: usize },

    #[error("non-finite loss at epoch {epoch}; last finite loss was {last_finite:?}")]
    NonFiniteLoss {
        epoch: usize,
        last_finite: Option<f64>,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
