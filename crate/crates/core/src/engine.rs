//! Instance lifecycle: configuration, device and surface setup, run state
//! and teardown.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;

use parking_lot::Mutex;

use crate::device::{Device, DeviceBuffer};
use crate::error::{Error, Result};
use crate::render::pipeline::PipelineCache;
use crate::render::{CameraController, FrameLog, InputEvent, RenderState};
use crate::sync::SyncShared;
use crate::view::{ViewId, ViewState};

/// Largest framebuffer edge the surface backends accept.
pub const MAX_SURFACE_EXTENT: u32 = 16384;

/// Environment variable selecting the device index.
pub const ENV_DEVICE_INDEX: &str = "VIZ_DEVICE_INDEX";
/// Environment variable forcing headless mode when set to `1`.
pub const ENV_HEADLESS: &str = "VIZ_HEADLESS";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SyncMode {
    #[default]
    Synchronized,
    Desynchronized,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EngineConfig {
    pub width: u32,
    pub height: u32,
    /// Frames per second; 0 is unlimited.
    pub target_fps: u32,
    /// Render to an off-screen target instead of a window.
    pub headless: bool,
    pub sync_mode: SyncMode,
    pub seed: u64,
    /// Explicit device index; `None` picks the first capable device.
    pub device_index: Option<usize>,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            width: 1920,
            height: 1080,
            target_fps: 0,
            headless: false,
            sync_mode: SyncMode::Synchronized,
            seed: 0,
            device_index: None,
        }
    }
}

impl EngineConfig {
    pub fn new(width: u32, height: u32) -> Self {
        EngineConfig {
            width,
            height,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidConfig(format!(
                "framebuffer extent {}x{} must be at least 1x1",
                self.width, self.height
            )));
        }
        Ok(())
    }

    /// Applies `VIZ_DEVICE_INDEX` and `VIZ_HEADLESS` from the process
    /// environment.
    pub fn with_env_overrides(self) -> Result<Self> {
        self.with_overrides_from(|key| std::env::var(key).ok())
    }

    /// Applies overrides read through `lookup`.
    pub fn with_overrides_from(mut self, lookup: impl Fn(&str) -> Option<String>) -> Result<Self> {
        if let Some(raw) = lookup(ENV_DEVICE_INDEX) {
            let idx = raw.trim().parse::<usize>().map_err(|_| {
                Error::InvalidConfig(format!("{ENV_DEVICE_INDEX}={raw:?} is not a non-negative integer"))
            })?;
            self.device_index = Some(idx);
        }
        if lookup(ENV_HEADLESS).is_some_and(|v| v.trim() == "1") {
            self.headless = true;
        }
        Ok(self)
    }
}

/// Where presented frames go.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SurfaceKind {
    /// Off-screen target; window close never happens.
    Offscreen,
    /// In-process presentation window fed by [`Instance::post_event`].
    Window,
}

/// Events delivered to the window surface and processed by the render loop
/// at frame boundaries.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum WindowEvent {
    CloseRequested,
    Input(InputEvent),
}

/// Live/created/released counts of registry objects.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RegistryCounters {
    pub allocations_created: u64,
    pub allocations_freed: u64,
    pub views_created: u64,
    pub views_destroyed: u64,
}

impl RegistryCounters {
    pub fn live_allocations(&self) -> u64 {
        self.allocations_created - self.allocations_freed
    }

    pub fn live_views(&self) -> u64 {
        self.views_created - self.views_destroyed
    }
}

#[derive(Default)]
pub(crate) struct Registry {
    pub allocations: HashMap<u64, DeviceBuffer>,
    pub views: BTreeMap<ViewId, Arc<ViewState>>,
    pub next_allocation: u64,
    pub next_view: ViewId,
    pub counters: RegistryCounters,
}

pub(crate) struct InstanceInner {
    pub id: u64,
    pub config: EngineConfig,
    pub surface: SurfaceKind,
    pub device: Device,
    pub registry: Mutex<Registry>,
    pub sync: SyncShared,
    pub render: Mutex<RenderState>,
    pub camera: Mutex<CameraController>,
    pub frame_log: Mutex<FrameLog>,
    pub pipelines: Mutex<PipelineCache>,
    pub events: Mutex<VecDeque<WindowEvent>>,
    pub running: AtomicBool,
    pub destroyed: AtomicBool,
    pub device_lost: AtomicBool,
    pub render_thread: Mutex<Option<JoinHandle<()>>>,
}

impl InstanceInner {
    pub fn ensure_live(&self) -> Result<()> {
        if self.destroyed.load(Ordering::Acquire) {
            Err(Error::InstanceDestroyed)
        } else {
            Ok(())
        }
    }
}

static NEXT_INSTANCE_ID: AtomicU64 = AtomicU64::new(1);

/// A live engine instance: owns the device context, surface, allocation and
/// view registries, synchronization state and metrics.
///
/// All methods take `&self`; the instance can be shared between threads and
/// serializes mutation internally. Dropping it destroys it.
pub struct Instance {
    pub(crate) inner: Arc<InstanceInner>,
}

impl std::fmt::Debug for Instance {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Instance")
            .field("id", &self.inner.id)
            .field("config", &self.inner.config)
            .field("surface", &self.inner.surface)
            .finish()
    }
}

impl Instance {
    /// Creates an instance with a `width`×`height` framebuffer, unlimited
    /// frame rate and synchronized display. Environment overrides apply.
    pub fn create(width: u32, height: u32) -> Result<Self> {
        Self::with_config(EngineConfig::new(width, height).with_env_overrides()?)
    }

    /// Creates an instance from an explicit configuration. The configuration
    /// is used as given; call [`EngineConfig::with_env_overrides`] first to
    /// honour the environment.
    pub fn with_config(config: EngineConfig) -> Result<Self> {
        config.validate()?;
        let device = Device::open(config.device_index)?;
        if config.width > MAX_SURFACE_EXTENT || config.height > MAX_SURFACE_EXTENT {
            return Err(Error::SurfaceCreationFailed(format!(
                "{}x{} exceeds the maximum surface extent {MAX_SURFACE_EXTENT}",
                config.width, config.height
            )));
        }
        let surface = if config.headless {
            SurfaceKind::Offscreen
        } else {
            SurfaceKind::Window
        };
        let render = RenderState::new(config.width, config.height)?;
        let camera = CameraController::new(config.width, config.height);
        let sync = SyncShared::new(config.target_fps, config.sync_mode == SyncMode::Synchronized);
        log::debug!(
            "instance on device {} ({}), {}x{} {:?}",
            device.index(),
            device.info().name,
            config.width,
            config.height,
            surface
        );
        Ok(Instance {
            inner: Arc::new(InstanceInner {
                id: NEXT_INSTANCE_ID.fetch_add(1, Ordering::Relaxed),
                config,
                surface,
                device,
                registry: Mutex::new(Registry::default()),
                sync,
                render: Mutex::new(render),
                camera: Mutex::new(camera),
                frame_log: Mutex::new(FrameLog::default()),
                pipelines: Mutex::new(PipelineCache::default()),
                events: Mutex::new(VecDeque::new()),
                running: AtomicBool::new(true),
                destroyed: AtomicBool::new(false),
                device_lost: AtomicBool::new(false),
                render_thread: Mutex::new(None),
            }),
        })
    }

    pub fn id(&self) -> u64 {
        self.inner.id
    }

    pub fn config(&self) -> &EngineConfig {
        &self.inner.config
    }

    pub fn surface(&self) -> SurfaceKind {
        self.inner.surface
    }

    pub fn device(&self) -> &Device {
        &self.inner.device
    }

    /// False once the window was closed, the device was lost or the instance
    /// was destroyed.
    pub fn is_running(&self) -> bool {
        self.inner.running.load(Ordering::Acquire) && !self.inner.destroyed.load(Ordering::Acquire)
    }

    /// Queues a window event. Close requests are ignored by off-screen
    /// surfaces.
    pub fn post_event(&self, event: WindowEvent) {
        if self.inner.surface == SurfaceKind::Offscreen && event == WindowEvent::CloseRequested {
            return;
        }
        self.inner.events.lock().push_back(event);
        if !self.is_displaying() {
            // Without a render loop there is nobody to drain the queue.
            self.process_events();
        }
    }

    pub(crate) fn process_events(&self) {
        process_events(&self.inner);
    }

    pub fn registry_counters(&self) -> RegistryCounters {
        self.inner.registry.lock().counters
    }

    /// Stops the render loop, releases every view and allocation, then the
    /// device context. Calling it again does nothing.
    pub fn destroy(&self) {
        if self.inner.destroyed.swap(true, Ordering::AcqRel) {
            return;
        }
        self.inner.running.store(false, Ordering::Release);
        self.inner.sync.request_stop();
        if let Some(handle) = self.inner.render_thread.lock().take() {
            if handle.join().is_err() {
                log::error!("render loop panicked");
            }
        }
        self.inner.sync.clear_pending();
        let mut reg = self.inner.registry.lock();
        let views = std::mem::take(&mut reg.views);
        reg.counters.views_destroyed += views.len() as u64;
        drop(views);
        let allocs = std::mem::take(&mut reg.allocations);
        reg.counters.allocations_freed += allocs.len() as u64;
    }
}

impl Drop for Instance {
    fn drop(&mut self) {
        self.destroy();
    }
}

pub(crate) fn process_events(inner: &InstanceInner) {
    let drained: Vec<WindowEvent> = inner.events.lock().drain(..).collect();
    for event in drained {
        match event {
            WindowEvent::CloseRequested => {
                log::info!("window closed");
                inner.running.store(false, Ordering::Release);
            }
            WindowEvent::Input(input) => inner.camera.lock().handle_input(input),
        }
    }
}
