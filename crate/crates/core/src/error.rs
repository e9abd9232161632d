use thiserror::Error;

use crate::em::Diagnostics;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("input outside the domain: {0}")]
    Domain(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("unsupported generator: {0}")]
    UnsupportedGenerator(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("matrix is not positive semi-definite (smallest eigenvalue {0:e})")]
    NotPsd(f64),

    #[error("degenerate scatter: {0}")]
    Degenerate(String),

    #[error("component {component} is empty (weight {weight:e})")]
    EmptyComponent { component: usize, weight: f64 },

    #[error("finite-sample existence check failed: {}", .0.reasons.join("; "))]
    Precondition(Diagnostics),

    #[error("initialization failed: {0}")]
    Init(String),

    #[error("fit failed: {0}")]
    FitFailed(String),

    #[error("out of range: {0}")]
    Range(String),

    #[error("invalid mixture specification: {0}")]
    InvalidSpec(String),
}

pub type Result<T> = std::result::Result<T, Error>;
