use std::path::PathBuf;

use thiserror::Error;

use crate::view::ViewId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Errors reported by the engine and its subsystems.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("no device supports both compute dispatch and rendering")]
    NoCapableDevice,
    #[error("surface creation failed: {0}")]
    SurfaceCreationFailed(String),
    #[error("instance has been destroyed")]
    InstanceDestroyed,

    #[error("allocation size must be greater than zero")]
    InvalidSize,
    #[error("out of device memory: requested {requested} bytes")]
    OutOfDeviceMemory { requested: usize },
    #[error("access [{offset}, {offset}+{len}) exceeds allocation of {size} bytes")]
    OutOfBounds { offset: usize, len: usize, size: usize },
    #[error("allocation {0} is still referenced by view {1}")]
    StillReferenced(u64, ViewId),
    #[error("allocation {0} is not live in this instance")]
    InvalidHandle(u64),

    #[error("invalid format: {0}")]
    InvalidFormat(String),
    #[error("view description must define at least the position property")]
    MissingPosition,
    #[error("size mismatch for {property}: need {needed}, have {available}")]
    SizeMismatch {
        property: &'static str,
        needed: usize,
        available: usize,
    },
    #[error("index width {0} is not one of 1, 2 or 4 bytes")]
    BadIndexWidth(usize),
    #[error("allocation {0} belongs to another instance")]
    ForeignAllocation(u64),
    #[error("unsupported format {format} for {property}")]
    UnsupportedFormat {
        property: &'static str,
        format: String,
    },
    #[error("invalid view description: {0}")]
    InvalidDescription(String),
    #[error("invalid value: {0}")]
    InvalidValue(String),

    #[error("display already active")]
    AlreadyDisplaying,
    #[error("display is not active in explicit synchronization mode")]
    NotDisplaying,
    #[error("a compute critical section is already open")]
    NestedCriticalSection,
    #[error("no compute critical section is open")]
    NoOpenCriticalSection,
    #[error("operation not allowed inside a compute critical section")]
    InCriticalSection,
    #[error("render loop owns the framebuffer while display is active")]
    RenderLoopActive,
    #[error("suspected deadlock: waited {0:?} for the render loop to release view buffers")]
    SyncTimeout(std::time::Duration),
    #[error("device lost")]
    DeviceLost,

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("mesh in {0} has no triangles")]
    EmptyMesh(PathBuf),

    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}
