//! Runs one of the bundled simulations with live display.

use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use ferrovis_core::samples::mesh::{builtin_mesh, load_obj, MeshSample};
use ferrovis_core::samples::nbody::{NBodyParams, NBodySample};
use ferrovis_core::samples::potts::{PottsParams, PottsSample};
use ferrovis_core::{EngineConfig, Instance};

#[derive(Debug, Parser)]
#[command(name = "sample", about = "Run a bundled simulation with live display")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// Render off-screen.
    #[arg(long)]
    headless: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Frame rate cap; 0 is unlimited.
    #[arg(long, default_value_t = 60)]
    target_fps: u32,
    /// Window size as WxH.
    #[arg(long, default_value = "1280x720", value_parser = parse_size)]
    size: (u32, u32),
    /// Save the final frame as a PPM image.
    #[arg(long)]
    ppm: Option<PathBuf>,
    /// Write the resolved pipeline sources to this directory.
    #[arg(long)]
    dump_shaders: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Checkerboard Metropolis simulation of the q-state Potts model.
    Potts {
        /// Lattice side; even.
        #[arg(long, default_value_t = 256)]
        l: usize,
        #[arg(long, default_value_t = 9)]
        q: u32,
        /// Temperature.
        #[arg(long, default_value_t = 0.5)]
        t: f64,
        /// Sweeps.
        #[arg(long, default_value_t = 1000)]
        iters: u64,
        #[command(flatten)]
        common: Common,
    },
    /// All-pairs gravitational N-body simulation.
    Nbody {
        #[arg(long, default_value_t = 4096)]
        n: usize,
        #[arg(long, default_value_t = 1000)]
        iters: u64,
        #[arg(long, default_value_t = 0.016)]
        dt: f32,
        #[arg(long, default_value_t = 0.995)]
        damping: f32,
        /// Softening length; the force uses its square.
        #[arg(long, default_value_t = 0.1)]
        softening: f32,
        #[command(flatten)]
        common: Common,
    },
    /// Mesh vertices pushed back and forth along their normals.
    Mesh {
        /// OBJ file; defaults to the bundled mesh named by --builtin.
        #[arg(long)]
        obj: Option<PathBuf>,
        /// icosphere or torus.
        #[arg(long, default_value = "icosphere")]
        builtin: String,
        /// Peak displacement along the normals.
        #[arg(long, default_value_t = 0.1)]
        amplitude: f32,
        #[arg(long, default_value_t = 720)]
        iters: u64,
        #[command(flatten)]
        common: Common,
    },
}

fn parse_size(s: &str) -> std::result::Result<(u32, u32), String> {
    let (w, h) = s.split_once('x').ok_or_else(|| format!("{s:?} is not WxH"))?;
    match (w.parse(), h.parse()) {
        (Ok(w), Ok(h)) if w > 0 && h > 0 => Ok((w, h)),
        _ => Err(format!("{s:?} is not WxH with positive sides")),
    }
}

fn open(common: &Common) -> Result<Instance> {
    let config = EngineConfig {
        target_fps: common.target_fps,
        headless: common.headless,
        seed: common.seed,
        ..EngineConfig::new(common.size.0, common.size.1)
    }
    .with_env_overrides()?;
    let inst = Instance::with_config(config)?;
    inst.display_async()?;
    Ok(inst)
}

fn run(inst: &Instance, common: &Common, iters: u64, mut step: impl FnMut(&Instance) -> Result<()>) -> Result<()> {
    let start = std::time::Instant::now();
    let mut done = 0;
    while done < iters && inst.is_running() {
        step(inst)?;
        done += 1;
    }
    if inst.is_running() {
        inst.wait_for_next_frame()?;
    }
    let elapsed = start.elapsed().as_secs_f64();
    let counters = inst.sync_counters();
    println!(
        "{done} iterations in {elapsed:.3}s, {} frames presented ({:.1} fps), {} critical sections",
        counters.frames_presented,
        counters.frames_presented as f64 / elapsed.max(1e-9),
        counters.critical_sections_completed
    );
    if let Some(dir) = &common.dump_shaders {
        let written = inst.dump_pipelines(dir)?;
        println!("wrote {} pipeline sources to {}", written.len(), dir.display());
    }
    if let Some(path) = &common.ppm {
        inst.write_ppm(path).with_context(|| format!("writing {}", path.display()))?;
    }
    inst.destroy();
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match Cli::parse().command {
        Command::Potts { l, q, t, iters, common } => {
            let params = PottsParams {
                l,
                q,
                temperature: t,
                seed: common.seed,
            };
            params.validate()?;
            let inst = open(&common)?;
            let mut sample = PottsSample::new(&inst, params)?;
            run(&inst, &common, iters, |i| Ok(sample.step(i)?))
        }
        Command::Nbody {
            n,
            iters,
            dt,
            damping,
            softening,
            common,
        } => {
            if !(softening > 0.0) {
                bail!("softening {softening} must be positive");
            }
            let params = NBodyParams {
                n,
                dt,
                damping,
                softening2: softening * softening,
                seed: common.seed,
                ..Default::default()
            };
            params.validate()?;
            let inst = open(&common)?;
            let mut sample = NBodySample::new(&inst, params)?;
            run(&inst, &common, iters, |i| Ok(sample.step(i)?))
        }
        Command::Mesh {
            obj,
            builtin,
            amplitude,
            iters,
            common,
        } => {
            let mesh = match &obj {
                Some(path) => load_obj(path).with_context(|| format!("loading {}", path.display()))?,
                None => match builtin_mesh(&builtin) {
                    Some(m) => m,
                    None => bail!("unknown bundled mesh {builtin:?}; expected icosphere or torus"),
                },
            };
            let inst = open(&common)?;
            let mut sample = MeshSample::new(&inst, &mesh, amplitude)?;
            run(&inst, &common, iters, |i| Ok(sample.step(i)?))
        }
    }
}
