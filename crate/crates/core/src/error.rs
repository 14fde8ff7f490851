use std::io;
use std::path::PathBuf;

use thiserror::Error;

use crate::DeviceId;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConfigError {
    #[error("at least one block size is required")]
    NoBlockSizes,
    #[error("block size {0} is not a power of two")]
    NotPowerOfTwo(u64),
    #[error("block size {0} listed twice")]
    DuplicateBlockSize(u64),
    #[error("cache capacity {capacity} holds no complete group of {group_size} bytes")]
    CapacityTooSmall { capacity: u64, group_size: u64 },
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RequestError {
    #[error("request length must be positive")]
    ZeroLength,
    #[error("request {offset}+{length} overflows the address space")]
    Overflow { offset: u64, length: u64 },
    #[error("request {offset}+{length} exceeds device extent {extent}")]
    OutOfRange { offset: u64, length: u64, extent: u64 },
    #[error("buffer of {got} bytes does not match request length {want}")]
    BufferLength { got: usize, want: u64 },
    #[error("engine was built without a data area; use the length-only calls")]
    NoDataArea,
}

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("backing store I/O on device {dev} at {offset}")]
    Io {
        dev: DeviceId,
        offset: u64,
        #[source]
        source: io::Error,
    },
    #[error("write to device {dev} at {offset} carried no payload")]
    MissingPayload { dev: DeviceId, offset: u64 },
    #[error("injected failure on device {dev} at {offset}")]
    Injected { dev: DeviceId, offset: u64 },
}

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Request(#[from] RequestError),
    #[error(transparent)]
    Store(#[from] StoreError),
}

#[derive(Debug, Error)]
pub enum ParseError {
    #[error("line {line}: {reason}")]
    Malformed { line: u64, reason: String },
    #[error("reading {}", .path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}
