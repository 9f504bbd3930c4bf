use thiserror::Error;

/// Errors shared across the crate.
#[derive(Error, Debug)]
pub enum CoreError {
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("noise level {level} out of range 0..={max}")]
    LevelOutOfRange { level: usize, max: usize },

    #[error("environment error at step {step}: {msg}")]
    Env { step: usize, msg: String },

    #[error("bad file format at offset {offset}: {msg}")]
    Format { offset: usize, msg: String },

    #[error("duplicate parameter name {0}")]
    DuplicateParam(String),

    #[error("unknown parameter name {0}")]
    UnknownParam(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, CoreError>;
