//! Frame assembly and presentation.

mod camera;
pub mod marker;
pub mod pipeline;
pub(crate) mod raster;

use std::io::Write;
use std::path::Path;
use std::sync::Arc;

pub use camera::{Camera, CameraController, InputEvent, DRAG_SENSITIVITY, PITCH_EPSILON, SCROLL_SENSITIVITY};
pub use marker::{marker_coverage, marker_sdf, Coverage, MarkerStyle};

use crate::engine::Instance;
use crate::error::{Error, Result};
use crate::view::{ViewId, ViewRuntime, ViewState, ViewType};
use raster::{Mat4, Target};

/// Opaque black.
pub const CLEAR_COLOR: u32 = 0xff00_0000;
/// Bytes of graphics memory per framebuffer pixel: front and back color
/// plus depth.
pub const BYTES_PER_PIXEL: usize = 12;
/// Uniform block bytes attributed to each live view.
pub const VIEW_UNIFORM_BYTES: usize = 256;

const MAX_LOGGED_FRAMES: usize = 1 << 20;

#[derive(Debug, Clone, PartialEq)]
pub struct FrameStats {
    pub frame_index: u64,
    /// Time since the previous presented frame, or the frame's own duration
    /// for the first one.
    pub frame_time_ms: f64,
    pub presented: bool,
    /// Views drawn in this frame, in draw order.
    pub visible_views: Vec<ViewId>,
    /// Critical sections completed when the frame started.
    pub sim_iteration: u64,
}

#[derive(Debug, Default)]
pub(crate) struct FrameLog {
    frames: Vec<FrameStats>,
    dropped: u64,
}

impl FrameLog {
    pub fn push(&mut self, stats: FrameStats) {
        if self.frames.len() < MAX_LOGGED_FRAMES {
            self.frames.push(stats);
        } else {
            self.dropped += 1;
        }
    }
}

/// Color and depth buffers of the surface.
pub(crate) struct RenderState {
    width: u32,
    height: u32,
    back: Vec<u32>,
    front: Vec<u32>,
    depth: Vec<f32>,
    presented: u64,
}

impl RenderState {
    pub fn new(width: u32, height: u32) -> Result<Self> {
        let pixels = (width as usize)
            .checked_mul(height as usize)
            .ok_or(Error::OutOfDeviceMemory { requested: usize::MAX })?;
        let buffer = |fill| -> Result<Vec<u32>> {
            let mut v = Vec::new();
            v.try_reserve_exact(pixels)
                .map_err(|_| Error::OutOfDeviceMemory { requested: pixels * 4 })?;
            v.resize(pixels, fill);
            Ok(v)
        };
        let back = buffer(CLEAR_COLOR)?;
        let front = buffer(CLEAR_COLOR)?;
        let mut depth = Vec::new();
        depth
            .try_reserve_exact(pixels)
            .map_err(|_| Error::OutOfDeviceMemory { requested: pixels * 4 })?;
        depth.resize(pixels, 1.0);
        Ok(RenderState {
            width,
            height,
            back,
            front,
            depth,
            presented: 0,
        })
    }

    pub fn present(&mut self) {
        std::mem::swap(&mut self.back, &mut self.front);
        self.presented += 1;
    }

    pub fn framebuffer_bytes(&self) -> usize {
        self.width as usize * self.height as usize * BYTES_PER_PIXEL
    }
}

fn to_mat4(cam: &Camera) -> Mat4 {
    let m = cam.view_proj();
    std::array::from_fn(|r| std::array::from_fn(|c| m[(r, c)] as f32))
}

/// Clears the back buffer and draws `views` in order with depth testing.
pub(crate) fn draw_frame(state: &mut RenderState, views: &[(Arc<ViewState>, ViewRuntime)], camera: &Camera) {
    let m = to_mat4(camera);
    let mut target = Target {
        width: state.width,
        height: state.height,
        color: &mut state.back,
        depth: &mut state.depth,
    };
    target.clear(CLEAR_COLOR);
    for (view, rt) in views {
        match view.desc.view_type {
            ViewType::Markers => raster::draw_markers(&mut target, &m, view, rt),
            ViewType::Edges => raster::draw_edges(&mut target, &m, view, rt),
            ViewType::Voxels => raster::draw_voxels(&mut target, &m, view, rt),
        }
    }
}

/// Writes packed RGBA pixels as a binary PPM image.
pub fn write_ppm(path: &Path, width: u32, height: u32, rgba: &[u8]) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    write!(out, "P6\n{width} {height}\n255\n")?;
    let rgb: Vec<u8> = rgba.chunks_exact(4).flat_map(|p| [p[0], p[1], p[2]]).collect();
    out.write_all(&rgb)?;
    out.flush()?;
    Ok(())
}

impl Instance {
    pub fn framebuffer_size(&self) -> (u32, u32) {
        let r = self.inner.render.lock();
        (r.width, r.height)
    }

    /// Bytes held by the framebuffer attachments.
    pub fn framebuffer_bytes(&self) -> usize {
        self.inner.render.lock().framebuffer_bytes()
    }

    /// Graphics memory created by the library: framebuffer attachments,
    /// shared allocations and per-view uniform blocks.
    pub fn graphics_memory_bytes(&self) -> usize {
        let views = self.inner.registry.lock().views.len();
        self.framebuffer_bytes() + self.shared_allocation_bytes() + views * VIEW_UNIFORM_BYTES
    }

    pub fn frames_presented(&self) -> u64 {
        self.inner.render.lock().presented
    }

    /// Statistics of every presented frame, oldest first.
    pub fn frame_stats(&self) -> Vec<FrameStats> {
        self.inner.frame_log.lock().frames.clone()
    }

    /// Current interactive camera.
    pub fn camera(&self) -> Camera {
        self.inner.camera.lock().camera()
    }

    /// Last presented frame as RGBA bytes, row-major from the top-left.
    pub fn presented_rgba(&self) -> Vec<u8> {
        let r = self.inner.render.lock();
        r.front.iter().flat_map(|p| p.to_le_bytes()).collect()
    }

    /// RGBA of one pixel of the last presented frame.
    pub fn pixel(&self, x: u32, y: u32) -> Option<[u8; 4]> {
        let r = self.inner.render.lock();
        (x < r.width && y < r.height).then(|| raster::unpack_rgba(r.front[(y * r.width + x) as usize]))
    }

    /// Saves the last presented frame as a binary PPM image.
    pub fn write_ppm(&self, path: &Path) -> Result<()> {
        let (w, h) = self.framebuffer_size();
        write_ppm(path, w, h, &self.presented_rgba())
    }
}
