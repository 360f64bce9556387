use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid workload profile: {0}")]
    InvalidProfile(String),

    #[error("{path}:{line}: {msg}")]
    TraceParse { path: PathBuf, line: usize, msg: String },

    #[error("address {addr:#x} out of range or misaligned")]
    BadAddress { addr: u64 },

    #[error("packet encode error: {0}")]
    Encode(String),

    #[error("packet decode error: {0}")]
    Decode(String),

    #[error("link error: CRC mismatch (expected {expected:#010x}, got {actual:#010x})")]
    Crc { expected: u32, actual: u32 },

    #[error("routing error: packet for scheduler {got} delivered to scheduler {expected}")]
    Routing { expected: u8, got: u8 },

    #[error("compression error: {0}")]
    Compress(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("simulator invariant violated: {0}")]
    Invariant(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
