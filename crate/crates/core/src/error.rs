use std::path::PathBuf;

use thiserror::Error;

use crate::mask::Dims;

/// Errors produced across the library and the command-line front end.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {left} vs {right}")]
    DimMismatch { left: Dims, right: Dims },

    #[error("data length {len} does not match dims {dims}")]
    LengthMismatchDims { dims: Dims, len: usize },

    #[error("invalid dims {0}: every extent must be positive")]
    InvalidDims(Dims),

    #[error("probability {value} at index {index} is outside [0, 1]")]
    ProbabilityOutOfRange { index: usize, value: f64 },

    #[error("pixel count d = {d} is too large for exhaustive enumeration (max {max})")]
    DTooLarge { d: usize, max: usize },

    #[error("weight {name} = {value} must be positive")]
    NonPositiveWeight { name: &'static str, value: f64 },

    #[error("invalid parameter {name} = {value}: {reason}")]
    InvalidParameter {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },

    #[error("perturbation at index {index} leaves [0, 1] (p = {value}, h = {h})")]
    OutOfDomain { index: usize, value: f64, h: f64 },

    #[error("value {value} out of range: {reason}")]
    OutOfRange { value: f64, reason: &'static str },

    #[error("empty sample set")]
    EmptySet,

    #[error("score vectors have different lengths ({0} vs {1})")]
    LengthMismatch(usize, usize),

    #[error("too few samples: {got} (need at least {need})")]
    TooFewSamples { got: usize, need: usize },

    #[error("infeasible synthetic config: {0}")]
    InfeasibleConfig(String),

    #[error("no rectangle size reaches fg fraction {target}: achievable range [{min}, {max}]")]
    InfeasibleRatio { target: f64, min: f64, max: f64 },

    #[error("non-finite loss at epoch {epoch}: {detail}")]
    NonFiniteLoss { epoch: usize, detail: String },

    #[error("malformed header in {path}: {reason}")]
    MalformedHeader { path: PathBuf, reason: String },

    #[error("{path}: pixel {index} has value {value}, expected 0 or 255")]
    NonBinaryPixel {
        path: PathBuf,
        index: usize,
        value: u16,
    },

    #[error("{path}: payload truncated (expected {expected} bytes, found {found})")]
    TruncatedPayload {
        path: PathBuf,
        expected: usize,
        found: usize,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("config line {line}: {message}")]
    Config { line: usize, message: String },

    #[error("invalid argument: {0}")]
    Usage(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the command-line front end: 1 usage, 2 data, 3 numeric.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) => 1,
            Error::NonFiniteLoss { .. } => 3,
            _ => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
