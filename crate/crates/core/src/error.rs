use std::io;

use thiserror::Error;

/// Errors produced by the clustering pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("io error: {0}")]
    Io(#[from] io::Error),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("duplicate document id {0:?}")]
    DuplicateId(String),

    #[error("unknown document id {0:?}")]
    UnknownId(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("dimension mismatch: {0}")]
    Shape(String),

    /// A precondition on caller-supplied arguments was violated.
    #[error("invalid argument: {0}")]
    Invalid(String),

    #[error("graph has no edges")]
    EmptyGraph,

    #[error("need ≥2 labeled classes (found {0})")]
    TooFewClasses(usize),

    #[error("labeled fraction {fraction:.4} is below threshold {threshold:.4}")]
    BelowThreshold { fraction: f64, threshold: f64 },

    #[error("node {0} has no reference label")]
    MissingTruth(usize),

    #[error("{0}")]
    State(String),
}

pub type Result<T> = std::result::Result<T, Error>;
