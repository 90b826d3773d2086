use std::io;

/// Errors produced anywhere in the engine.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("I/O error: {0}")]
    Io(#[from] io::Error),

    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },

    #[error("unsupported format version {0}")]
    UnsupportedVersion(u32),

    #[error("invalid header: {0}")]
    InvalidHeader(String),

    #[error("truncated data at frame {frame}: expected {expected} bytes, got {got}")]
    Truncated {
        frame: u64,
        expected: usize,
        got: usize,
    },

    #[error("non-finite value in frame {frame} at offset {offset}")]
    NonFiniteFrame { frame: u64, offset: usize },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite {what} at grid location {location}")]
    NonFinite { what: &'static str, location: usize },

    #[error("non-finite {what} at step {step}")]
    Numeric { step: u64, what: String },

    #[error("training diverged at step {step}: {reason}")]
    Diverged { step: u64, reason: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),

    #[error("image error: {0}")]
    Image(#[from] image::ImageError),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
