//! Compute/render synchronization.
//!
//! The render loop runs on its own thread. While synchronization is enabled
//! the loop and the compute side exclude each other: a compute critical
//! section (between [`Instance::prepare_views`] and
//! [`Instance::update_views`]) never overlaps a frame that reads view
//! buffers. View changes requested while the loop runs are queued and
//! applied either at the next frame boundary or, when issued inside a
//! critical section, all at once when the section closes.
//!
//! Neither side is forced to alternate. When the render loop is blocked
//! waiting for its turn at the moment a section closes, the next section
//! waits until that frame has started, so both sides keep progressing.

use std::sync::atomic::{fence, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use parking_lot::{Condvar, Mutex, MutexGuard};

use crate::engine::{process_events, Instance, InstanceInner};
use crate::error::{Error, Result};
use crate::render::{self, FrameStats};
use crate::view::{ViewChange, ViewState};

/// How long `prepare_views` waits for the render loop before reporting a
/// suspected deadlock.
pub const WATCHDOG: Duration = Duration::from_secs(10);

const MAX_SPANS: usize = 1 << 20;

/// Makes host writes to device buffers visible to later device work.
pub fn publish_host_writes() {
    fence(Ordering::SeqCst);
}

/// Makes device writes visible to subsequent host reads.
pub fn acquire_device_writes() {
    fence(Ordering::SeqCst);
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DisplayMode {
    #[default]
    Idle,
    /// Started by [`Instance::display`]; sections are managed internally.
    AutoDisplay,
    /// Started by [`Instance::display_async`]; the caller brackets compute.
    AsyncDisplay,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Phase {
    #[default]
    RenderTurn,
    ComputeCritical,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SyncCounters {
    pub frames_started: u64,
    pub frames_presented: u64,
    pub critical_sections_completed: u64,
    /// Frames that began reading view buffers while a critical section was
    /// open. Always 0 while synchronization is enabled.
    pub frames_started_during_critical: u64,
}

/// Snapshot of the synchronization state.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SyncStatus {
    pub mode: DisplayMode,
    pub phase: Phase,
    pub target_fps: u32,
    pub sync_enabled: bool,
    pub render_loop_active: bool,
    pub counters: SyncCounters,
}

/// Time spans, in seconds since instance creation, of critical sections
/// and of frame buffer reads.
#[derive(Debug, Clone, Default)]
pub struct SyncSpans {
    pub critical: Vec<(f64, f64)>,
    pub frame_reads: Vec<(f64, f64)>,
}

impl SyncSpans {
    /// Number of frame-read spans intersecting some critical span.
    pub fn overlaps(&self) -> usize {
        let mut crit = self.critical.clone();
        crit.sort_by(|a, b| a.0.total_cmp(&b.0));
        self.frame_reads
            .iter()
            .filter(|&&(r0, r1)| {
                // First critical span ending after the read starts.
                let i = crit.partition_point(|c| c.1 <= r0);
                crit.get(i).is_some_and(|c| c.0 < r1)
            })
            .count()
    }
}

struct SyncState {
    mode: DisplayMode,
    phase: Phase,
    target_fps: u32,
    sync_enabled: bool,
    counters: SyncCounters,
    render_loop_active: bool,
    stop: bool,
    reading: bool,
    compute_waiting: bool,
    render_waiting: bool,
    /// Set when a section closed while the render loop was waiting: the
    /// next section may not start before `frames_started` exceeds it.
    owed_frame: Option<u64>,
    pending: Vec<(Arc<ViewState>, ViewChange)>,
    section_start: f64,
    spans: SyncSpans,
}

pub(crate) struct SyncShared {
    state: Mutex<SyncState>,
    cond: Condvar,
    epoch: Instant,
}

impl SyncShared {
    pub fn new(target_fps: u32, sync_enabled: bool) -> Self {
        SyncShared {
            state: Mutex::new(SyncState {
                mode: DisplayMode::Idle,
                phase: Phase::RenderTurn,
                target_fps,
                sync_enabled,
                counters: SyncCounters::default(),
                render_loop_active: false,
                stop: false,
                reading: false,
                compute_waiting: false,
                render_waiting: false,
                owed_frame: None,
                pending: Vec::new(),
                section_start: 0.0,
                spans: SyncSpans::default(),
            }),
            cond: Condvar::new(),
            epoch: Instant::now(),
        }
    }

    fn now(&self) -> f64 {
        self.epoch.elapsed().as_secs_f64()
    }

    pub fn request_stop(&self) {
        self.state.lock().stop = true;
        self.cond.notify_all();
    }

    pub fn clear_pending(&self) {
        self.state.lock().pending.clear();
    }

    /// Applies a view change now, or queues it while a render loop runs.
    pub fn submit_change(&self, view: &Arc<ViewState>, change: ViewChange) {
        let mut s = self.state.lock();
        if s.render_loop_active {
            s.pending.push((Arc::clone(view), change));
        } else {
            view.apply(change);
        }
    }

    fn wait_until(&self, s: &mut MutexGuard<'_, SyncState>, deadline: Instant) -> Result<()> {
        if self.cond.wait_until(s, deadline).timed_out() && Instant::now() >= deadline {
            log::error!("render loop held view buffers for {WATCHDOG:?}; suspected deadlock");
            return Err(Error::SyncTimeout(WATCHDOG));
        }
        Ok(())
    }

    fn enter_critical(&self, require_async: bool) -> Result<()> {
        let mut s = self.state.lock();
        if require_async && s.mode != DisplayMode::AsyncDisplay {
            return Err(Error::NotDisplaying);
        }
        if s.phase == Phase::ComputeCritical {
            return Err(Error::NestedCriticalSection);
        }
        if s.sync_enabled {
            let deadline = Instant::now() + WATCHDOG;
            if let Some(owed) = s.owed_frame {
                while s.render_loop_active && !s.stop && s.counters.frames_started <= owed {
                    self.wait_until(&mut s, deadline)?;
                }
                s.owed_frame = None;
            }
            s.compute_waiting = true;
            while s.reading && !s.stop {
                if let Err(e) = self.wait_until(&mut s, deadline) {
                    s.compute_waiting = false;
                    self.cond.notify_all();
                    return Err(e);
                }
            }
            s.compute_waiting = false;
        }
        acquire_device_writes();
        s.phase = Phase::ComputeCritical;
        s.section_start = self.now();
        Ok(())
    }

    fn leave_critical(&self) -> Result<()> {
        let mut s = self.state.lock();
        if s.phase != Phase::ComputeCritical {
            return Err(Error::NoOpenCriticalSection);
        }
        publish_host_writes();
        for (view, change) in s.pending.drain(..) {
            view.apply(change);
        }
        s.phase = Phase::RenderTurn;
        s.counters.critical_sections_completed += 1;
        let span = (s.section_start, self.now());
        if s.spans.critical.len() < MAX_SPANS {
            s.spans.critical.push(span);
        }
        if s.sync_enabled && s.render_waiting {
            s.owed_frame = Some(s.counters.frames_started);
        }
        drop(s);
        self.cond.notify_all();
        Ok(())
    }
}

/// Sleeps the render thread so frames start no faster than the target.
struct FramePacer {
    next: Option<Instant>,
    period: Option<Duration>,
}

impl FramePacer {
    fn new() -> Self {
        FramePacer {
            next: None,
            period: None,
        }
    }

    fn pace(&mut self, target_fps: u32) {
        let period = (target_fps > 0).then(|| Duration::from_secs_f64(1.0 / target_fps as f64));
        if period != self.period {
            self.period = period;
            self.next = None;
        }
        let Some(period) = period else {
            return;
        };
        let now = Instant::now();
        let next = match self.next {
            // Deadlines advance by whole periods so sleep overshoot does not
            // accumulate; a frame that ran long restarts the schedule.
            Some(prev) if now < prev + period => prev + period,
            _ => now + period,
        };
        self.next = Some(next);
        let now = Instant::now();
        if next > now {
            std::thread::sleep(next - now);
        }
    }
}

pub(crate) enum FrameOutcome {
    Presented(FrameStats),
    Stopped,
}

/// Acquires the render turn, draws one frame from view buffers and presents
/// it.
pub(crate) fn run_frame(inner: &InstanceInner, last_present: &mut Option<Instant>) -> FrameOutcome {
    let sync = &inner.sync;
    let t0 = Instant::now();
    let (frame_index, sim_iteration, read_start) = {
        let mut s = sync.state.lock();
        if s.stop {
            return FrameOutcome::Stopped;
        }
        if s.sync_enabled {
            while !s.stop && (s.phase == Phase::ComputeCritical || s.compute_waiting) {
                s.render_waiting = true;
                sync.cond.wait(&mut s);
            }
            s.render_waiting = false;
            if s.stop {
                return FrameOutcome::Stopped;
            }
        } else if s.phase == Phase::ComputeCritical {
            s.counters.frames_started_during_critical += 1;
        }
        if s.phase == Phase::RenderTurn {
            for (view, change) in s.pending.drain(..) {
                view.apply(change);
            }
        }
        s.reading = true;
        s.counters.frames_started += 1;
        let started = (s.counters.frames_started, s.counters.critical_sections_completed, sync.now());
        drop(s);
        sync.cond.notify_all();
        started
    };

    let views: Vec<_> = inner
        .registry
        .lock()
        .views
        .values()
        .map(|v| (Arc::clone(v), *v.runtime.lock()))
        .filter(|(_, rt)| rt.visible)
        .collect();
    let camera = {
        let mut cam = inner.camera.lock();
        if !cam.is_fitted() && !views.is_empty() {
            cam.fit(&views);
        }
        cam.camera()
    };
    let mut target = inner.render.lock();
    render::draw_frame(&mut target, &views, &camera);
    acquire_device_writes();

    {
        let mut s = sync.state.lock();
        s.reading = false;
        let span = (read_start, sync.now());
        if s.spans.frame_reads.len() < MAX_SPANS {
            s.spans.frame_reads.push(span);
        }
    }
    sync.cond.notify_all();

    target.present();
    drop(target);
    let now = Instant::now();
    let frame_time = now.duration_since(last_present.unwrap_or(t0));
    *last_present = Some(now);
    sync.state.lock().counters.frames_presented += 1;
    let stats = FrameStats {
        frame_index,
        frame_time_ms: frame_time.as_secs_f64() * 1e3,
        presented: true,
        visible_views: views.iter().map(|(v, _)| v.id).collect(),
        sim_iteration,
    };
    inner.frame_log.lock().push(stats.clone());
    FrameOutcome::Presented(stats)
}

fn render_loop(inner: Arc<InstanceInner>) {
    let mut pacer = FramePacer::new();
    let mut last_present = None;
    loop {
        process_events(&inner);
        if !inner.running.load(Ordering::Acquire) {
            break;
        }
        if inner.device_lost.load(Ordering::Acquire) {
            log::error!("device lost; stopping render loop");
            inner.running.store(false, Ordering::Release);
            break;
        }
        match run_frame(&inner, &mut last_present) {
            FrameOutcome::Presented(_) => {}
            FrameOutcome::Stopped => break,
        }
        let target = inner.sync.state.lock().target_fps;
        pacer.pace(target);
    }
    let mut s = inner.sync.state.lock();
    s.render_loop_active = false;
    for (view, change) in s.pending.drain(..) {
        view.apply(change);
    }
    drop(s);
    inner.sync.cond.notify_all();
}

impl Instance {
    fn start_render_loop(&self, mode: DisplayMode) -> Result<()> {
        self.inner.ensure_live()?;
        {
            let mut s = self.inner.sync.state.lock();
            if s.mode != DisplayMode::Idle {
                return Err(Error::AlreadyDisplaying);
            }
            s.mode = mode;
            s.phase = Phase::RenderTurn;
            s.render_loop_active = true;
        }
        let inner = Arc::clone(&self.inner);
        let handle = std::thread::Builder::new()
            .name("render-loop".into())
            .spawn(move || render_loop(inner))?;
        *self.inner.render_thread.lock() = Some(handle);
        Ok(())
    }

    /// Starts the render loop and runs `compute_step(i)` for `i` in
    /// `0..iterations`, each inside a critical section. Stops early if the
    /// instance stops running. The display stays live after returning.
    pub fn display<F>(&self, iterations: u64, mut compute_step: F) -> Result<()>
    where
        F: FnMut(u64),
    {
        self.start_render_loop(DisplayMode::AutoDisplay)?;
        for i in 0..iterations {
            if !self.is_running() {
                break;
            }
            self.inner.sync.enter_critical(false)?;
            compute_step(i);
            self.inner.sync.leave_critical()?;
        }
        Ok(())
    }

    /// Starts the render loop and returns; the caller brackets its compute
    /// with [`prepare_views`](Self::prepare_views) and
    /// [`update_views`](Self::update_views).
    pub fn display_async(&self) -> Result<()> {
        self.start_render_loop(DisplayMode::AsyncDisplay)
    }

    /// Opens a compute critical section. Blocks until no frame is reading
    /// view buffers (with synchronization enabled).
    pub fn prepare_views(&self) -> Result<()> {
        self.inner.sync.enter_critical(true)
    }

    /// Closes the critical section: compute writes become visible, queued
    /// view changes apply atomically and rendering resumes.
    pub fn update_views(&self) -> Result<()> {
        self.inner.sync.leave_critical()
    }

    /// Frame rate cap; 0 is unlimited.
    pub fn set_target_fps(&self, fps: u32) {
        self.inner.sync.state.lock().target_fps = fps;
    }

    /// Enables or disables mutual exclusion between compute and rendering.
    /// Disabled sections still fence memory.
    pub fn set_sync_enabled(&self, enabled: bool) -> Result<()> {
        let mut s = self.inner.sync.state.lock();
        if s.phase == Phase::ComputeCritical {
            return Err(Error::InCriticalSection);
        }
        s.sync_enabled = enabled;
        if !enabled {
            s.owed_frame = None;
        }
        drop(s);
        self.inner.sync.cond.notify_all();
        Ok(())
    }

    pub fn is_displaying(&self) -> bool {
        self.inner.sync.state.lock().render_loop_active
    }

    pub fn sync_status(&self) -> SyncStatus {
        let s = self.inner.sync.state.lock();
        SyncStatus {
            mode: s.mode,
            phase: s.phase,
            target_fps: s.target_fps,
            sync_enabled: s.sync_enabled,
            render_loop_active: s.render_loop_active,
            counters: s.counters,
        }
    }

    pub fn sync_counters(&self) -> SyncCounters {
        self.inner.sync.state.lock().counters
    }

    pub fn sync_spans(&self) -> SyncSpans {
        self.inner.sync.state.lock().spans.clone()
    }

    /// Draws and presents one frame on the calling thread. Only valid while
    /// no render loop owns the framebuffer.
    pub fn render_frame(&self) -> Result<FrameStats> {
        self.inner.ensure_live()?;
        if self.is_displaying() {
            return Err(Error::RenderLoopActive);
        }
        if self.inner.device_lost.load(Ordering::Acquire) {
            self.inner.running.store(false, Ordering::Release);
            return Err(Error::DeviceLost);
        }
        self.process_events();
        let mut last = None;
        match run_frame(&self.inner, &mut last) {
            FrameOutcome::Presented(stats) => Ok(stats),
            FrameOutcome::Stopped => Err(Error::InstanceDestroyed),
        }
    }

    /// Blocks until a frame that started after this call has been
    /// presented, so it reflects every finished critical section. Without a
    /// render loop the frame is drawn on the calling thread.
    pub fn wait_for_next_frame(&self) -> Result<()> {
        if !self.is_displaying() {
            return self.render_frame().map(|_| ());
        }
        let target = self.sync_counters().frames_started;
        let deadline = Instant::now() + WATCHDOG;
        while self.sync_counters().frames_presented <= target {
            self.inner.ensure_live()?;
            if !self.is_displaying() {
                return self.render_frame().map(|_| ());
            }
            if Instant::now() >= deadline {
                return Err(Error::SyncTimeout(WATCHDOG));
            }
            std::thread::sleep(Duration::from_millis(1));
        }
        Ok(())
    }

    /// Marks the device as lost: the render loop terminates and the
    /// instance stops running. Used to exercise failure handling.
    #[doc(hidden)]
    pub fn simulate_device_lost(&self) {
        self.inner.device_lost.store(true, Ordering::Release);
        if !self.is_displaying() {
            self.inner.running.store(false, Ordering::Release);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::EngineConfig;

    fn instance() -> Instance {
        Instance::with_config(EngineConfig {
            headless: true,
            ..EngineConfig::new(16, 16)
        })
        .unwrap()
    }

    fn wait_for(cond: impl Fn() -> bool) {
        let deadline = Instant::now() + Duration::from_secs(10);
        while !cond() {
            assert!(Instant::now() < deadline, "condition not reached");
            std::thread::sleep(Duration::from_millis(1));
        }
    }

    #[test]
    fn display_zero_iterations() {
        let inst = instance();
        let mut calls = 0;
        inst.display(0, |_| calls += 1).unwrap();
        assert_eq!(calls, 0);
        wait_for(|| inst.sync_counters().frames_presented > 3);
        assert_eq!(inst.sync_counters().critical_sections_completed, 0);
        assert_eq!(inst.sync_status().mode, DisplayMode::AutoDisplay);
    }

    #[test]
    fn display_counts_sections() {
        let inst = instance();
        let mut calls = Vec::new();
        inst.display(100, |i| calls.push(i)).unwrap();
        assert_eq!(calls, (0..100).collect::<Vec<_>>());
        let c = inst.sync_counters();
        assert_eq!(c.critical_sections_completed, 100);
        assert_eq!(c.frames_started_during_critical, 0);
        assert!(matches!(inst.display(1, |_| ()), Err(Error::AlreadyDisplaying)));
        assert!(matches!(inst.prepare_views(), Err(Error::NotDisplaying)));
    }

    #[test]
    fn section_protocol_errors() {
        let inst = instance();
        assert!(matches!(inst.prepare_views(), Err(Error::NotDisplaying)));
        inst.display_async().unwrap();
        assert!(matches!(inst.display_async(), Err(Error::AlreadyDisplaying)));
        assert!(matches!(inst.update_views(), Err(Error::NoOpenCriticalSection)));
        inst.prepare_views().unwrap();
        assert!(matches!(inst.prepare_views(), Err(Error::NestedCriticalSection)));
        assert!(matches!(inst.set_sync_enabled(false), Err(Error::InCriticalSection)));
        inst.update_views().unwrap();
        inst.set_sync_enabled(false).unwrap();
        assert!(!inst.sync_status().sync_enabled);
    }

    #[test]
    fn async_display_presents_without_sections() {
        let inst = instance();
        inst.display_async().unwrap();
        wait_for(|| inst.sync_counters().frames_presented >= 20);
        assert_eq!(inst.sync_counters().critical_sections_completed, 0);
        let frames = inst.frame_stats();
        assert!(frames.iter().all(|f| f.presented && f.frame_time_ms > 0.0));
        assert!(frames.windows(2).all(|w| w[1].frame_index > w[0].frame_index));
    }

    #[test]
    fn prepare_waits_for_in_flight_frame() {
        let inst = instance();
        inst.display_async().unwrap();
        wait_for(|| inst.sync_counters().frames_presented >= 1);
        for _ in 0..50 {
            inst.prepare_views().unwrap();
            std::thread::sleep(Duration::from_micros(200));
            inst.update_views().unwrap();
        }
        let spans = inst.sync_spans();
        assert_eq!(spans.critical.len(), 50);
        assert_eq!(spans.overlaps(), 0);
        assert_eq!(inst.sync_counters().frames_started_during_critical, 0);
    }

    #[test]
    fn desync_lets_frames_start_during_sections() {
        let inst = instance();
        inst.set_sync_enabled(false).unwrap();
        inst.display_async().unwrap();
        let t = Instant::now();
        inst.prepare_views().unwrap();
        assert!(t.elapsed() < Duration::from_millis(500));
        let before = inst.sync_counters().frames_started;
        wait_for(|| inst.sync_counters().frames_started > before + 2);
        inst.update_views().unwrap();
        assert!(inst.sync_counters().frames_started_during_critical > 0);
    }

    #[test]
    fn destroy_stops_loop_quickly() {
        let inst = instance();
        inst.set_target_fps(30);
        inst.display_async().unwrap();
        wait_for(|| inst.sync_counters().frames_presented >= 2);
        let t = Instant::now();
        inst.destroy();
        // One frame period at 30 FPS plus scheduling slack.
        assert!(t.elapsed() < Duration::from_millis(34 + 50), "{:?}", t.elapsed());
        assert!(!inst.is_running());
    }

    #[test]
    fn device_loss_stops_running() {
        let inst = instance();
        inst.display_async().unwrap();
        inst.simulate_device_lost();
        wait_for(|| !inst.is_running());
        wait_for(|| !inst.is_displaying());
        let single = instance();
        single.simulate_device_lost();
        assert!(matches!(single.render_frame(), Err(Error::DeviceLost)));
        assert!(!single.is_running());
    }

    #[test]
    fn manual_frames_only_without_loop() {
        let inst = instance();
        let stats = inst.render_frame().unwrap();
        assert!(stats.presented);
        assert!(stats.visible_views.is_empty());
        inst.display_async().unwrap();
        assert!(matches!(inst.render_frame(), Err(Error::RenderLoopActive)));
    }

    #[test]
    fn overlap_detector() {
        let spans = SyncSpans {
            critical: vec![(1.0, 2.0), (3.0, 4.0)],
            frame_reads: vec![(0.0, 0.5), (2.0, 3.0), (3.5, 3.6), (1.9, 2.1), (4.0, 5.0)],
        };
        assert_eq!(spans.overlaps(), 2);
    }
}
