//! Zero-copy visualization of simulation buffers.
//!
//! Compute code writes into [`SharedAllocation`]s; views describe how to
//! draw them as markers, edges or voxels, and the render loop reads the same
//! memory in place. A small synchronization protocol keeps frames from
//! reading buffers while a compute step is writing them.
//!
//! ```no_run
//! use ferrovis_core::*;
//!
//! let inst = Instance::create(1280, 720)?;
//! let (points, alloc) = inst.alloc_linear(1000 * 12)?;
//! let desc = ViewDescription::new(ViewType::Markers, DomainType::Domain3D, 1000)
//!     .with_property(PropertyType::Position, PropertyDescription::new(alloc, 1000, FormatDescription::FLOAT3));
//! inst.create_view(&desc)?;
//! inst.display(100, |_| {
//!     inst.device().dispatch(1000, |i| {
//!         let p: [f32; 3] = points.load_vec(i);
//!         points.store_vec(i, [p[0] + 0.01, p[1], p[2]]);
//!     });
//! })?;
//! # Ok::<(), ferrovis_core::Error>(())
//! ```

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bench;
pub mod device;
pub mod engine;
pub mod error;
pub mod memory;
pub mod render;
pub mod rng;
pub mod samples;
pub mod sync;
pub mod view;

pub use bench::{BenchConfig, BenchMode, BenchRecord, Resolution};
pub use device::{Device, DeviceBuffer, DeviceInfo};
pub use engine::{EngineConfig, Instance, RegistryCounters, SurfaceKind, SyncMode, WindowEvent};
pub use error::{Error, Result};
pub use memory::SharedAllocation;
pub use render::pipeline::{PipelineCacheStats, PipelineKey};
pub use render::{Camera, FrameStats, InputEvent, MarkerStyle};
pub use sync::{DisplayMode, Phase, SyncCounters, SyncSpans, SyncStatus};
pub use view::{
    DomainType, EdgeOptions, EdgeTopology, FillStyle, FormatDescription, IndexDescription, MarkerOptions,
    MarkerShape, PropertyDescription, PropertyType, ScalarKind, ViewDescription, ViewHandle, ViewId,
    ViewOptions, ViewRuntime, ViewType,
};
