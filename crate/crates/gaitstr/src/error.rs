use thiserror::Error;

/// Errors produced by the gaitstr library.
#[derive(Debug, Error)]
pub enum GaitError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("degenerate pose: frame {frame} has zero vertical extent")]
    DegeneratePose { frame: usize },

    #[error("insufficient frames: have {have}, need {need}")]
    InsufficientFrames { have: usize, need: usize },

    #[error("invalid batch: {0}")]
    InvalidBatch(String),

    #[error("geometry error: {0}")]
    Geometry(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("config error at line {line}: {msg}")]
    ConfigLine { line: usize, msg: String },

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("training diverged at iteration {iteration}: {msg}")]
    Diverged { iteration: u64, msg: String },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, GaitError>;
