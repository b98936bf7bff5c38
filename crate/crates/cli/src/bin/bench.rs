//! Brownian-motion benchmark: one configuration per run, one CSV row out.

use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::Parser;
use ferrovis_core::bench::{run_benchmark_with, write_csv, BenchConfig, BenchMode, Resolution};

#[derive(Debug, Parser)]
#[command(name = "bench", about = "Measure display overhead of device-resident point clouds")]
struct Args {
    /// base, sync, desync or hostcopy.
    #[arg(long, default_value = "sync")]
    mode: BenchMode,
    /// Number of points.
    #[arg(long, default_value_t = 1000)]
    n: usize,
    #[arg(long = "iters", default_value_t = 1000)]
    iterations: u64,
    /// fhd, qhd, uhd or WxH.
    #[arg(long, default_value = "fhd")]
    resolution: Resolution,
    /// Frame rate cap; 0 is unlimited.
    #[arg(long, default_value_t = 0)]
    target_fps: u32,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Step standard deviation; defaults to 0.002 times the extent.
    #[arg(long)]
    sigma: Option<f32>,
    /// Side of the starting cube.
    #[arg(long, default_value_t = 1.0)]
    extent: f32,
    /// Marker diameter in pixels.
    #[arg(long, default_value_t = 2.0)]
    marker_size: f32,
    /// CSV file the record is appended to.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Render off-screen.
    #[arg(long)]
    headless: bool,
    /// Device index; overrides automatic selection.
    #[arg(long)]
    device: Option<usize>,
    /// Write the resolved pipeline sources to this directory.
    #[arg(long)]
    dump_shaders: Option<PathBuf>,
    /// Save the final frame as a PPM image.
    #[arg(long)]
    ppm: Option<PathBuf>,
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let args = Args::parse();
    let cfg = BenchConfig {
        mode: args.mode,
        n: args.n,
        iterations: args.iterations,
        resolution: args.resolution,
        target_fps: args.target_fps,
        seed: args.seed,
        sigma: args.sigma,
        extent: args.extent,
        marker_size: args.marker_size,
        headless: args.headless,
        device_index: args.device,
    };
    let record = run_benchmark_with(&cfg, |inst| {
        if let Some(dir) = &args.dump_shaders {
            let written = inst.dump_pipelines(dir)?;
            log::info!("wrote {} pipeline sources to {}", written.len(), dir.display());
        }
        if let Some(path) = &args.ppm {
            inst.wait_for_next_frame()?;
            inst.write_ppm(path)?;
        }
        Ok(())
    })
    .with_context(|| format!("{} benchmark with n={}", cfg.mode, cfg.n))?;
    if cfg.mode == BenchMode::Base && (args.dump_shaders.is_some() || args.ppm.is_some()) {
        log::warn!("base mode renders nothing; --dump-shaders and --ppm are ignored");
    }

    println!(
        "{} n={} {}x{} fps={:.1} p50={:.3}ms p99={:.3}ms compute={:.3}s elapsed={:.3}s gfx={}B iters={}",
        record.mode,
        record.n,
        record.width,
        record.height,
        record.measured_fps,
        record.frame_time_p50_ms,
        record.frame_time_p99_ms,
        record.compute_time_total_s,
        record.elapsed_total_s,
        record.graphics_mem_bytes,
        record.iterations_completed
    );
    if let Some(path) = &args.out {
        write_csv(std::slice::from_ref(&record), path).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}
