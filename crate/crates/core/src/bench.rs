//! Brownian point-cloud benchmark: configuration, execution modes, metrics
//! and CSV output.

use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::device::{process_resident_bytes, Device, DeviceBuffer};
use crate::engine::{EngineConfig, Instance, SyncMode};
use crate::error::{Error, Result};
use crate::render::FrameStats;
use crate::rng::{self, Stream};
use crate::view::{DomainType, FormatDescription, PropertyDescription, PropertyType, ViewDescription, ViewType};

/// Iterations excluded from aggregates at the start of a run.
pub const WARMUP_ITERATIONS: u64 = 10;
/// Frames excluded from frame-time percentiles at the start of a run.
pub const WARMUP_FRAMES: usize = 60;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BenchMode {
    /// Compute only; no engine, no surface.
    Base,
    /// Shared buffer, compute inside critical sections.
    Sync,
    /// Shared buffer with synchronization disabled.
    Desync,
    /// Compute on the host, upload the whole buffer in each critical section.
    HostCopy,
}

impl BenchMode {
    pub const ALL: [BenchMode; 4] = [BenchMode::Base, BenchMode::Sync, BenchMode::Desync, BenchMode::HostCopy];

    pub fn as_str(self) -> &'static str {
        match self {
            BenchMode::Base => "base",
            BenchMode::Sync => "sync",
            BenchMode::Desync => "desync",
            BenchMode::HostCopy => "hostcopy",
        }
    }
}

impl fmt::Display for BenchMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BenchMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        BenchMode::ALL
            .into_iter()
            .find(|m| m.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidConfig(format!("unknown mode {s:?}; expected base, sync, desync or hostcopy")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Resolution {
    Fhd,
    Qhd,
    Uhd,
    Custom(u32, u32),
}

impl Resolution {
    pub fn size(self) -> (u32, u32) {
        match self {
            Resolution::Fhd => (1920, 1080),
            Resolution::Qhd => (2560, 1440),
            Resolution::Uhd => (3840, 2160),
            Resolution::Custom(w, h) => (w, h),
        }
    }
}

impl FromStr for Resolution {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "fhd" => Ok(Resolution::Fhd),
            "qhd" => Ok(Resolution::Qhd),
            "uhd" => Ok(Resolution::Uhd),
            other => {
                let bad = || Error::InvalidConfig(format!("resolution {s:?} is not fhd, qhd, uhd or <W>x<H>"));
                let (w, h) = other.split_once('x').ok_or_else(bad)?;
                let w = w.trim().parse().map_err(|_| bad())?;
                let h = h.trim().parse().map_err(|_| bad())?;
                if w == 0 || h == 0 {
                    return Err(bad());
                }
                Ok(Resolution::Custom(w, h))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchConfig {
    pub mode: BenchMode,
    pub n: usize,
    pub iterations: u64,
    pub resolution: Resolution,
    /// 0 is unlimited.
    pub target_fps: u32,
    pub seed: u64,
    /// Step standard deviation; `None` uses 0.002·extent.
    pub sigma: Option<f32>,
    /// Side of the cube the points start in.
    pub extent: f32,
    /// Marker diameter in pixels.
    pub marker_size: f32,
    pub headless: bool,
    pub device_index: Option<usize>,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            mode: BenchMode::Sync,
            n: 1000,
            iterations: 1000,
            resolution: Resolution::Fhd,
            target_fps: 0,
            seed: 0,
            sigma: None,
            extent: 1.0,
            marker_size: 2.0,
            headless: true,
            device_index: None,
        }
    }
}

impl BenchConfig {
    pub fn sigma(&self) -> f32 {
        self.sigma.unwrap_or(0.002 * self.extent)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::InvalidConfig("n must be at least 1".into()));
        }
        if self.iterations == 0 {
            return Err(Error::InvalidConfig("iterations must be at least 1".into()));
        }
        if !(self.sigma() >= 0.0) {
            return Err(Error::InvalidConfig(format!("sigma {} must be non-negative", self.sigma())));
        }
        if !(self.extent > 0.0) {
            return Err(Error::InvalidConfig(format!("extent {} must be positive", self.extent)));
        }
        if !(self.marker_size > 0.0) {
            return Err(Error::InvalidConfig(format!("marker size {} must be positive", self.marker_size)));
        }
        Ok(())
    }

    fn warmup_iterations(&self) -> u64 {
        WARMUP_ITERATIONS.min(self.iterations / 2)
    }
}

/// One CSV row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRecord {
    pub mode: BenchMode,
    pub n: u64,
    pub width: u32,
    pub height: u32,
    pub target_fps: u32,
    pub measured_fps: f64,
    pub frame_time_p50_ms: f64,
    pub frame_time_p99_ms: f64,
    pub compute_time_total_s: f64,
    pub elapsed_total_s: f64,
    pub graphics_mem_bytes: u64,
    pub device_mem_total_bytes: u64,
    pub iterations_completed: u64,
}

/// Column names, in order.
pub const CSV_COLUMNS: [&str; 13] = [
    "mode",
    "n",
    "width",
    "height",
    "target_fps",
    "measured_fps",
    "frame_time_p50_ms",
    "frame_time_p99_ms",
    "compute_time_total_s",
    "elapsed_total_s",
    "graphics_mem_bytes",
    "device_mem_total_bytes",
    "iterations_completed",
];

/// `n` points uniform in `[0, extent]³`, a pure function of `seed`.
pub fn init_random_positions(seed: u64, n: usize, extent: f32) -> Vec<[f32; 3]> {
    (0..n as u64)
        .map(|i| std::array::from_fn(|a| rng::uniform(seed, Stream::InitPosition, i, a as u64) * extent))
        .collect()
}

#[inline]
fn brownian_delta(seed: u64, i: usize, axis: usize, iteration: u64, sigma: f32) -> f32 {
    sigma * rng::normal(seed, Stream::Brownian, (i * 3 + axis) as u64, iteration)
}

/// Host reference: adds `sigma·z` to every coordinate, with `z` standard
/// normal drawn from `(seed, point, axis, iteration)`. No clamping.
pub fn brownian_step(positions: &mut [[f32; 3]], sigma: f32, iteration: u64, seed: u64) {
    if !(sigma > 0.0) {
        return;
    }
    for (i, p) in positions.iter_mut().enumerate() {
        for (a, c) in p.iter_mut().enumerate() {
            *c += brownian_delta(seed, i, a, iteration, sigma);
        }
    }
}

/// Device twin of [`brownian_step`] on `n` packed `f32x3` positions.
pub fn brownian_step_device(device: &Device, positions: &DeviceBuffer, n: usize, sigma: f32, iteration: u64, seed: u64) {
    if !(sigma > 0.0) {
        return;
    }
    device.dispatch(n, |i| {
        let p: [f32; 3] = positions.load_vec(i);
        let q: [f32; 3] = std::array::from_fn(|a| p[a] + brownian_delta(seed, i, a, iteration, sigma));
        positions.store_vec(i, q);
    });
}

fn position_bytes(points: &[[f32; 3]]) -> Vec<u8> {
    points.iter().flatten().flat_map(|c| c.to_le_bytes()).collect()
}

/// Graphics and whole-process device memory at one instant.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MemorySample {
    pub graphics_mem_bytes: u64,
    /// Resident memory of the process; 0 when unavailable.
    pub device_mem_total_bytes: u64,
    pub device_mem_available: bool,
}

/// Samples memory use. Without an instance nothing was created by the
/// library, so graphics memory is 0.
pub fn sample_memory_usage(instance: Option<&Instance>) -> MemorySample {
    let total = process_resident_bytes();
    MemorySample {
        graphics_mem_bytes: instance.map_or(0, |i| i.graphics_memory_bytes() as u64),
        device_mem_total_bytes: total.unwrap_or(0) as u64,
        device_mem_available: total.is_some(),
    }
}

/// Nearest-rank percentile of an ascending slice.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let rank = (q / 100.0 * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

fn frame_time_percentiles(frames: &[FrameStats]) -> (f64, f64) {
    let skip = if frames.len() > 2 * WARMUP_FRAMES { WARMUP_FRAMES } else { 0 };
    let mut times: Vec<f64> = frames[skip..].iter().map(|f| f.frame_time_ms).collect();
    times.sort_by(f64::total_cmp);
    (percentile(&times, 50.0), percentile(&times, 99.0))
}

/// Runs one benchmark configuration.
pub fn run_benchmark(cfg: &BenchConfig) -> Result<BenchRecord> {
    run_benchmark_with(cfg, |_| Ok(()))
}

/// Like [`run_benchmark`], calling `finish` on the engine instance after
/// the last iteration and before teardown. Base mode has no instance and
/// never calls it.
pub fn run_benchmark_with(cfg: &BenchConfig, finish: impl FnOnce(&Instance) -> Result<()>) -> Result<BenchRecord> {
    cfg.validate()?;
    let (width, height) = cfg.resolution.size();
    let bytes = cfg
        .n
        .checked_mul(12)
        .ok_or(Error::OutOfDeviceMemory { requested: usize::MAX })?;
    let initial = init_random_positions(cfg.seed, cfg.n, cfg.extent);
    let record = |measured_fps, (p50, p99), compute: Duration, elapsed: Duration, mem: MemorySample, done| BenchRecord {
        mode: cfg.mode,
        n: cfg.n as u64,
        width,
        height,
        target_fps: cfg.target_fps,
        measured_fps,
        frame_time_p50_ms: p50,
        frame_time_p99_ms: p99,
        compute_time_total_s: compute.as_secs_f64(),
        elapsed_total_s: elapsed.as_secs_f64(),
        graphics_mem_bytes: mem.graphics_mem_bytes,
        device_mem_total_bytes: mem.device_mem_total_bytes,
        iterations_completed: done,
    };
    let sigma = cfg.sigma();

    if cfg.mode == BenchMode::Base {
        let device = Device::open(cfg.device_index)?;
        let buffer = device.alloc(bytes)?;
        buffer.write_bytes(0, &position_bytes(&initial))?;
        let start = Instant::now();
        let mut compute = Duration::ZERO;
        for it in 0..cfg.iterations {
            let t = Instant::now();
            brownian_step_device(&device, &buffer, cfg.n, sigma, it, cfg.seed);
            compute += t.elapsed();
        }
        let elapsed = start.elapsed();
        let mem = sample_memory_usage(None);
        return Ok(record(0.0, (0.0, 0.0), compute, elapsed, mem, cfg.iterations));
    }

    let inst = Instance::with_config(EngineConfig {
        width,
        height,
        target_fps: cfg.target_fps,
        headless: cfg.headless,
        sync_mode: if cfg.mode == BenchMode::Desync {
            SyncMode::Desynchronized
        } else {
            SyncMode::Synchronized
        },
        seed: cfg.seed,
        device_index: cfg.device_index,
    })?;
    let (buffer, alloc) = inst.alloc_linear(bytes)?;
    alloc.write_from_host(0, &position_bytes(&initial))?;
    let mut desc = ViewDescription::new(ViewType::Markers, DomainType::Domain3D, cfg.n).with_property(
        PropertyType::Position,
        PropertyDescription::new(alloc.clone(), cfg.n, FormatDescription::FLOAT3),
    );
    desc.extent = [cfg.extent; 3];
    desc.default_size = cfg.marker_size;
    desc.default_color = [0.35, 0.75, 1.0, 1.0];
    inst.create_view(&desc)?;

    let mut host = initial;
    let warmup = cfg.warmup_iterations();
    inst.display_async()?;
    let start = Instant::now();
    let mut window_start = (start, inst.sync_counters().frames_presented);
    let mut compute = Duration::ZERO;
    let mut done = 0;
    for it in 0..cfg.iterations {
        if !inst.is_running() {
            break;
        }
        if cfg.mode == BenchMode::HostCopy {
            let t = Instant::now();
            brownian_step(&mut host, sigma, it, cfg.seed);
            let upload = position_bytes(&host);
            compute += t.elapsed();
            inst.prepare_views()?;
            let t = Instant::now();
            alloc.write_from_host(0, &upload)?;
            compute += t.elapsed();
            inst.update_views()?;
        } else {
            inst.prepare_views()?;
            let t = Instant::now();
            brownian_step_device(inst.device(), &buffer, cfg.n, sigma, it, cfg.seed);
            compute += t.elapsed();
            inst.update_views()?;
        }
        done += 1;
        if done == warmup {
            window_start = (Instant::now(), inst.sync_counters().frames_presented);
        }
    }
    let end = Instant::now();
    let frames_end = inst.sync_counters().frames_presented;
    let elapsed = end - start;
    let window = (end - window_start.0).as_secs_f64();
    let measured_fps = if window > 0.0 {
        (frames_end - window_start.1) as f64 / window
    } else {
        0.0
    };
    let mem = sample_memory_usage(Some(&inst));
    let frames = inst.frame_stats();
    let finished = finish(&inst);
    inst.destroy();
    finished?;
    if done < cfg.iterations {
        return Err(Error::InvalidConfig(format!(
            "run stopped after {done} of {} iterations",
            cfg.iterations
        )));
    }
    Ok(record(measured_fps, frame_time_percentiles(&frames), compute, elapsed, mem, done))
}

/// Appends records to a CSV file, writing the header only when the file is
/// new or empty.
pub fn write_csv(records: &[BenchRecord], path: &Path) -> Result<()> {
    let fresh = std::fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
    let file = std::fs::OpenOptions::new().create(true).append(true).open(path)?;
    let mut w = csv::WriterBuilder::new().has_headers(fresh).from_writer(file);
    if fresh && records.is_empty() {
        w.write_record(CSV_COLUMNS)?;
    }
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv(path: &Path) -> Result<Vec<BenchRecord>> {
    let mut r = csv::Reader::from_path(path)?;
    let records = r.deserialize().collect::<std::result::Result<Vec<BenchRecord>, _>>()?;
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn parse_modes_and_resolutions() {
        assert_eq!("hostcopy".parse::<BenchMode>().unwrap(), BenchMode::HostCopy);
        assert_eq!("Sync".parse::<BenchMode>().unwrap(), BenchMode::Sync);
        assert!("fast".parse::<BenchMode>().is_err());
        assert_eq!("uhd".parse::<Resolution>().unwrap().size(), (3840, 2160));
        assert_eq!("640x480".parse::<Resolution>().unwrap().size(), (640, 480));
        assert!("0x480".parse::<Resolution>().is_err());
        assert!("big".parse::<Resolution>().is_err());
    }

    #[test]
    fn positions_deterministic_and_in_box() {
        let a = init_random_positions(5, 1000, 2.0);
        assert_eq!(a, init_random_positions(5, 1000, 2.0));
        assert_ne!(a, init_random_positions(6, 1000, 2.0));
        assert!(a.iter().flatten().all(|c| (0.0..2.0).contains(c)));
        let one = init_random_positions(1, 1, 1.0);
        assert_eq!(one.len(), 1);
        assert!(one[0].iter().all(|c| (0.0..1.0).contains(c)));
    }

    #[test]
    fn zero_sigma_is_identity() {
        let mut p = init_random_positions(1, 10, 1.0);
        let before = p.clone();
        brownian_step(&mut p, 0.0, 3, 1);
        assert_eq!(p, before);
    }

    #[test]
    fn device_twin_matches_host() {
        let device = Device::open(None).unwrap();
        let mut host = init_random_positions(9, 1000, 1.0);
        let buf = device.alloc(1000 * 12).unwrap();
        buf.write_bytes(0, &position_bytes(&host)).unwrap();
        for it in 0..3 {
            brownian_step(&mut host, 0.01, it, 9);
            brownian_step_device(&device, &buf, 1000, 0.01, it, 9);
        }
        for (i, p) in host.iter().enumerate() {
            let q: [f32; 3] = buf.load_vec(i);
            for a in 0..3 {
                assert!((p[a] - q[a]).abs() <= 1e-5);
            }
        }
    }

    #[test]
    fn percentiles_nearest_rank() {
        let v: Vec<f64> = (1..=100).map(f64::from).collect();
        assert_eq!(percentile(&v, 50.0), 50.0);
        assert_eq!(percentile(&v, 99.0), 99.0);
        assert_eq!(percentile(&[], 50.0), 0.0);
        assert_eq!(percentile(&[3.0], 99.0), 3.0);
    }

    #[test]
    fn base_mode_reports_zero_fps_and_graphics_memory() {
        let cfg = BenchConfig {
            mode: BenchMode::Base,
            n: 100,
            iterations: 5,
            ..Default::default()
        };
        let r = run_benchmark(&cfg).unwrap();
        assert_eq!(r.measured_fps, 0.0);
        assert_eq!(r.graphics_mem_bytes, 0);
        assert_eq!(r.iterations_completed, 5);
    }

    #[test]
    fn invalid_configs() {
        let bad = |cfg: BenchConfig| assert!(matches!(run_benchmark(&cfg), Err(Error::InvalidConfig(_))));
        bad(BenchConfig { n: 0, ..Default::default() });
        bad(BenchConfig { iterations: 0, ..Default::default() });
        bad(BenchConfig { sigma: Some(-1.0), ..Default::default() });
    }

    fn record(mode: BenchMode, fps: f64) -> BenchRecord {
        BenchRecord {
            mode,
            n: 10,
            width: 64,
            height: 48,
            target_fps: 0,
            measured_fps: fps,
            frame_time_p50_ms: 1.25,
            frame_time_p99_ms: 2.5,
            compute_time_total_s: 0.5,
            elapsed_total_s: 1.0,
            graphics_mem_bytes: 1234,
            device_mem_total_bytes: 5678,
            iterations_completed: 10,
        }
    }

    #[test]
    fn csv_header_and_append() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("out.csv");
        write_csv(&[record(BenchMode::Sync, 60.0)], &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 2);
        assert_eq!(text.lines().next().unwrap(), CSV_COLUMNS.join(","));
        write_csv(&[record(BenchMode::HostCopy, 30.0)], &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 3);
        assert_eq!(text.matches("mode,").count(), 1);
        assert!(text.lines().nth(2).unwrap().starts_with("hostcopy,"));
    }

    proptest! {
        #[test]
        fn csv_round_trip(fps in 0.0f64..1e4, p50 in 0.0f64..100.0, n in 1u64..1_000_000_000, mode in 0usize..4) {
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("r.csv");
            let mut r = record(BenchMode::ALL[mode], fps);
            r.n = n;
            r.frame_time_p50_ms = p50;
            write_csv(std::slice::from_ref(&r), &path).unwrap();
            prop_assert_eq!(read_csv(&path).unwrap(), vec![r]);
        }
    }
}
