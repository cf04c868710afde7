use std::io;
use thiserror::Error;

/// Errors shared across the engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("empty input: at least one element required")]
    Empty,

    #[error("even fan-in {0}: binary fan-in must be odd")]
    EvenFanIn(usize),

    #[error("agreement count {agree} exceeds vector length {len}")]
    AgreementOutOfRange { agree: usize, len: usize },

    #[error("invalid geometry: {0}")]
    Geometry(String),

    #[error("stale mirror: packed weights out of sync with shadow weights")]
    StaleMirror,

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("zero output activation: sign-gated error is undefined at 0")]
    ZeroOutputActivation,

    #[error("invalid slope constant {0}: must be positive and finite")]
    InvalidSlope(f64),

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("input kind mismatch: {0}")]
    InputKind(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("mirror mismatch: packed weights do not equal the sign of stored shadow weights")]
    MirrorMismatch,

    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
