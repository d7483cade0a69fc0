use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid shape: {0}")]
    InvalidShape(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("cell {cell} is a structural zero but holds {value}")]
    StructuralZeroViolated { cell: usize, value: u64 },

    #[error("invalid fiber specification: {0}")]
    InvalidSpec(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("enumeration incomplete: cap of {cap} elements reached")]
    EnumerationIncomplete { cap: usize },

    #[error("fiber is empty")]
    EmptyFiber,

    #[error("cell {cell} is not bounded by any margin row")]
    UnboundedCell { cell: usize },

    #[error("assignment is missing variable {var}")]
    MissingVariable { var: u32 },

    #[error("value {value} does not fit into {width} bits")]
    ValueOutOfRange { value: u64, width: usize },

    #[error("move on line {line} is not in the kernel of the constraint matrix")]
    NotInKernel { line: usize },

    #[error("cycle enumeration exceeded the cap of {cap}")]
    CycleCapExceeded { cap: usize },

    #[error("structural zeros remove every cell of {axis} {index}")]
    DegenerateZeros { axis: &'static str, index: usize },

    #[error("sampler exited with status {status}: {stderr}")]
    SamplerExit { status: i32, stderr: String },

    #[error("sampler timed out after {secs} s")]
    SamplerTimeout { secs: f64 },

    #[error("sampler produced no valid samples ({invalid} invalid solutions discarded)")]
    NoValidSamples { invalid: usize },

    #[error("sampler produced too many invalid samples: {invalid} of {total}")]
    TooManyInvalid { invalid: usize, total: usize },

    #[error("proposal is not an element of the fiber")]
    InvalidProposal,

    #[error("maximum likelihood estimate does not exist: {0}")]
    MleUndefined(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("generation failed after {attempts} attempts: {reason}")]
    GenerationFailed { attempts: usize, reason: String },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    IoRaw(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            line,
            message: message.into(),
        }
    }
}
