//! Error type shared by all runtime modules.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("interleave ratio violated: {0}")]
    Ratio(String),

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("malformed interleaved sequence at item {index}: {reason}")]
    MalformedSequence { index: usize, reason: String },

    #[error("context overflow: need {needed} positions, limit is {limit}")]
    ContextOverflow { needed: usize, limit: usize },

    #[error("refinement level {level} out of range (valid: 1..{max})")]
    LevelOutOfRange { level: usize, max: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("code value {value} out of range for codebook size {size}")]
    CodeOutOfRange { value: u32, size: usize },

    #[error("input too short: {got} samples, need at least {need}")]
    TooShort { got: usize, need: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("non-finite gradient at coordinate {0}")]
    NonFiniteGradient(usize),

    #[error("training diverged at step {step}: loss {loss}")]
    DivergenceDetected { step: usize, loss: f64 },

    #[error("audio duration must be positive, got {0}")]
    ZeroAudio(f64),

    #[error("zero vector has no direction")]
    ZeroVector,

    #[error("pipeline failed in {component}: {reason}")]
    PipelineFailure { component: String, reason: String },

    #[error("unknown parameter {0}")]
    UnknownParam(String),

    #[error("config: {0}")]
    Config(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("parse: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
