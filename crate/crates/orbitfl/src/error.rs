//! Crate-wide error type.

use crate::SatId;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid orbital elements: {0}")]
    InvalidElements(String),
    #[error("invalid ground station: {0}")]
    InvalidStation(String),
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),
    #[error("invalid connectivity sets: {0}")]
    InvalidConnectivity(String),
    #[error("trace parse error at line {line}: {msg}")]
    TraceParse { line: usize, msg: String },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid dataset: {0}")]
    InvalidData(String),
    #[error("dataset parse error at line {line}: {msg}")]
    DataParse { line: usize, msg: String },
    #[error("local training diverged: non-finite loss at step {step}")]
    DivergentTraining { step: usize },
    #[error("gradient buffer is empty")]
    EmptyBuffer,
    #[error("unknown satellite id {0}")]
    UnknownSatellite(SatId),
    #[error("zone {0} has no visiting satellite")]
    OrphanZone(u32),
    #[error("not enough samples: need at least {need}, got {got}")]
    InsufficientSamples { need: usize, got: usize },
    #[error("degenerate training data: {0}")]
    DegenerateData(String),
    #[error("regressor artifact error: {0}")]
    Artifact(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
