use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("position {position} out of range 1..={max}")]
    PositionOutOfRange { position: u64, max: u64 },

    #[error("vertex enumeration produced {found} extreme points, expected 80")]
    VertexCount { found: usize },

    #[error("{what} did not converge after {iterations} iterations (residual {residual:e})")]
    NonConvergence {
        what: &'static str,
        iterations: usize,
        residual: f64,
        best: Vec<f64>,
    },

    #[error("parameters outside the valid regime: {0}")]
    InvalidRegime(String),

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("cycle {cycle}: only {available} calibration trials available, {required} required")]
    CalibrationShortfall {
        cycle: usize,
        available: u64,
        required: u64,
    },

    #[error("invalid PEF table: {0}")]
    InvalidPefTable(String),

    #[error("protocol run did not succeed")]
    NotSucceeded,

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("malformed block stream: {0}")]
    Wire(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
