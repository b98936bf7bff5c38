//! Acceptance suite. Runs every criterion in sequence (timing checks must
//! not share the CPU with each other) and prints one PASS/FAIL line each.
//!
//! `cargo test -p ferrovis-core --test acceptance -- <filter>` runs the
//! criteria whose name contains `<filter>`.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use ferrovis_core::bench::{brownian_step, run_benchmark, BenchConfig, BenchMode, BenchRecord, Resolution};
use ferrovis_core::render::marker::shade;
use ferrovis_core::render::{marker_coverage, marker_sdf, MarkerStyle};
use ferrovis_core::samples::nbody::{integrate_device, momentum, NBodyParams, NBodySample, NBodyState};
use ferrovis_core::samples::potts::{split_grid, write_grid, write_grid_device};
use ferrovis_core::{
    DomainType, EngineConfig, Error, FormatDescription, Instance, MarkerShape, PropertyDescription, PropertyType,
    ViewDescription, ViewType,
};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn headless(width: u32, height: u32) -> Instance {
    Instance::with_config(EngineConfig {
        headless: true,
        ..EngineConfig::new(width, height)
    })
    .expect("headless instance")
}

fn bench(mode: BenchMode, n: usize, iterations: u64, resolution: Resolution) -> Result<BenchRecord, String> {
    run_benchmark(&BenchConfig {
        mode,
        n,
        iterations,
        resolution,
        target_fps: 0,
        seed: 7,
        headless: true,
        ..Default::default()
    })
    .map_err(|e| format!("{mode} n={n}: {e}"))
}

fn sync_mutual_exclusion() -> Outcome {
    let start = Instant::now();
    let inst = headless(320, 240);
    let n = 2000;
    let (buf, alloc) = inst.alloc_linear(n * 12).map_err(|e| e.to_string())?;
    let desc = ViewDescription::new(ViewType::Markers, DomainType::Domain3D, n).with_property(
        PropertyType::Position,
        PropertyDescription::new(alloc, n, FormatDescription::FLOAT3),
    );
    inst.create_view(&desc).map_err(|e| e.to_string())?;
    inst.display_async().map_err(|e| e.to_string())?;

    let mut rng = StdRng::seed_from_u64(11);
    let mut last = inst.sync_counters();
    for it in 0..1000u32 {
        inst.prepare_views().map_err(|e| e.to_string())?;
        let busy = Duration::from_micros(rng.random_range(0..1500));
        let until = Instant::now() + busy;
        while Instant::now() < until {
            for i in 0..n {
                buf.store_vec(i, [it as f32, i as f32, 0.0]);
            }
        }
        inst.update_views().map_err(|e| e.to_string())?;
        std::thread::sleep(Duration::from_micros(rng.random_range(0..500)));
        if (it + 1) % 100 == 0 {
            let now = inst.sync_counters();
            ensure!(
                now.frames_presented > last.frames_presented
                    && now.critical_sections_completed > last.critical_sections_completed,
                "no progress by iteration {}: {last:?} -> {now:?}",
                it + 1
            );
            last = now;
        }
    }
    let c = inst.sync_counters();
    let overlaps = inst.sync_spans().overlaps();
    inst.destroy();
    let elapsed = start.elapsed();
    ensure!(c.frames_started_during_critical == 0, "{} frames started during compute", c.frames_started_during_critical);
    ensure!(overlaps == 0, "{overlaps} overlapping compute/render spans");
    ensure!(c.critical_sections_completed == 1000, "{} sections completed", c.critical_sections_completed);
    ensure!(elapsed < Duration::from_secs(60), "took {elapsed:?}");
    Ok(format!(
        "{} frames, {} sections, 0 overlaps in {:.1}s",
        c.frames_presented,
        c.critical_sections_completed,
        elapsed.as_secs_f64()
    ))
}

fn pingpong_atomicity() -> Outcome {
    let inst = headless(320, 240);
    let params = NBodyParams {
        n: 256,
        seed: 3,
        ..Default::default()
    };
    let mut sample = NBodySample::new(&inst, params).map_err(|e| e.to_string())?;
    let ids = sample.views.each_ref().map(|v| v.id());
    inst.display_async().map_err(|e| e.to_string())?;
    for _ in 0..500 {
        sample.step(&inst).map_err(|e| e.to_string())?;
    }
    inst.wait_for_next_frame().map_err(|e| e.to_string())?;
    let frames = inst.frame_stats();
    let sections = inst.sync_counters().critical_sections_completed;
    inst.destroy();
    let violations = frames
        .iter()
        .filter(|f| f.visible_views.iter().filter(|v| ids.contains(v)).count() != 1)
        .count();
    ensure!(!frames.is_empty(), "no frames presented");
    ensure!(violations == 0, "{violations} of {} frames show both or neither buffer", frames.len());
    ensure!(sections == 500, "{sections} sections completed");
    Ok(format!("{} frames, 0 violations", frames.len()))
}

fn frame_limiter() -> Outcome {
    let inst = headless(1920, 1080);
    inst.display_async().map_err(|e| e.to_string())?;
    let measure = |target: u32, window: Duration| {
        inst.set_target_fps(target);
        std::thread::sleep(Duration::from_millis(500));
        let (t0, f0) = (Instant::now(), inst.frames_presented());
        std::thread::sleep(window);
        let (t1, f1) = (Instant::now(), inst.frames_presented());
        (f1 - f0) as f64 / (t1 - t0).as_secs_f64()
    };
    let mut report = Vec::new();
    let mut failures = Vec::new();
    for target in [30, 60, 144] {
        let fps = measure(target, Duration::from_secs(5));
        report.push(format!("{target}->{fps:.1}"));
        if (fps - target as f64).abs() > 0.1 * target as f64 {
            failures.push(format!("target {target} measured {fps:.1}"));
        }
    }
    let unlimited = measure(0, Duration::from_secs(2));
    report.push(format!("0->{unlimited:.1}"));
    if unlimited <= 144.0 {
        failures.push(format!("unlimited measured {unlimited:.1} <= 144"));
    }
    inst.destroy();
    ensure!(failures.is_empty(), "{} ({})", failures.join("; "), report.join(", "));
    Ok(report.join(", "))
}

fn benchmark_ordinal() -> Outcome {
    let n = 1_000_000;
    let iterations = 300;
    let base = bench(BenchMode::Base, n, iterations, Resolution::Fhd)?;
    let sync = bench(BenchMode::Sync, n, iterations, Resolution::Fhd)?;
    let host = bench(BenchMode::HostCopy, n, iterations, Resolution::Fhd)?;
    let ratio = sync.measured_fps / host.measured_fps;
    let detail = format!(
        "fps sync {:.2} / hostcopy {:.2} = {ratio:.2}x, elapsed sync {:.1}s hostcopy {:.1}s, base fps {}",
        sync.measured_fps, host.measured_fps, sync.elapsed_total_s, host.elapsed_total_s, base.measured_fps
    );
    let failures: Vec<&str> = [
        (base.measured_fps == 0.0, "base fps not 0"),
        (sync.elapsed_total_s < host.elapsed_total_s, "sync elapsed not below hostcopy"),
        (ratio >= 1.5, "fps ratio below 1.5"),
    ]
    .into_iter()
    .filter_map(|(ok, what)| (!ok).then_some(what))
    .collect();
    ensure!(failures.is_empty(), "{} ({detail})", failures.join("; "));
    Ok(detail)
}

fn fps_degradation() -> Outcome {
    let small = bench(BenchMode::Sync, 100_000, 60, Resolution::Fhd)?;
    let large = bench(BenchMode::Sync, 10_000_000, 6, Resolution::Fhd)?;
    let detail = format!("n=1e5 {:.2} fps, n=1e7 {:.2} fps", small.measured_fps, large.measured_fps);
    ensure!(large.measured_fps < small.measured_fps, "{detail}");
    Ok(detail)
}

fn memory_accounting() -> Outcome {
    let base = bench(BenchMode::Base, 1000, 20, Resolution::Fhd)?;
    ensure!(base.graphics_mem_bytes == 0, "base graphics memory {}", base.graphics_mem_bytes);
    let uhd = bench(BenchMode::Sync, 1000, 20, Resolution::Uhd)?;
    let qhd = bench(BenchMode::Sync, 1000, 20, Resolution::Qhd)?;
    let ratio = uhd.graphics_mem_bytes as f64 / qhd.graphics_mem_bytes as f64;
    let pixels = (3840.0 * 2160.0) / (2560.0 * 1440.0);
    let detail = format!(
        "UHD {} B / QHD {} B = {ratio:.3} (pixel ratio {pixels})",
        uhd.graphics_mem_bytes, qhd.graphics_mem_bytes
    );
    ensure!((ratio / pixels - 1.0).abs() <= 0.3, "{detail}");
    Ok(detail)
}

/// Walks the lattice in row-major order; the k-th cell of each colour
/// receives entry k of that colour's packed array.
fn enumerate_grid(white: &[u32], black: &[u32], l: usize) -> Vec<u32> {
    let (mut w, mut b) = (0, 0);
    let mut grid = Vec::with_capacity(l * l);
    for row in 0..l {
        for col in 0..l {
            if (row + col) % 2 == 0 {
                grid.push(white[w]);
                w += 1;
            } else {
                grid.push(black[b]);
                b += 1;
            }
        }
    }
    grid
}

fn potts_assembly() -> Outcome {
    let device = ferrovis_core::Device::open(None).map_err(|e| e.to_string())?;
    let mut rng = StdRng::seed_from_u64(5);
    for l in [2usize, 4, 8, 64] {
        let half = l * l / 2;
        let white: Vec<u32> = (0..half).map(|_| rng.random()).collect();
        let black: Vec<u32> = (0..half).map(|_| rng.random()).collect();
        let oracle = enumerate_grid(&white, &black, l);
        let grid = write_grid(&white, &black, l);
        ensure!(grid == oracle, "L={l}: host assembly differs from enumeration");
        ensure!(split_grid(&grid, l) == (white.clone(), black.clone()), "L={l}: split does not invert");

        let (dw, db, dg) = (
            device.alloc(half * 4).map_err(|e| e.to_string())?,
            device.alloc(half * 4).map_err(|e| e.to_string())?,
            device.alloc(l * l * 4).map_err(|e| e.to_string())?,
        );
        for k in 0..half {
            dw.store_u32(k, white[k]);
            db.store_u32(k, black[k]);
        }
        write_grid_device(&device, &dw, &db, &dg, l);
        let device_grid: Vec<u32> = (0..l * l).map(|i| dg.load_u32(i)).collect();
        ensure!(device_grid == oracle, "L={l}: device assembly differs from enumeration");
    }
    Ok("L = 2, 4, 8, 64 bit-exact; split inverts".into())
}

fn nbody_conservation() -> Outcome {
    let params = NBodyParams {
        n: 64,
        damping: 1.0,
        softening2: 0.01,
        seed: 9,
        ..Default::default()
    };
    let mut host = NBodyState::new(params).map_err(|e| e.to_string())?;
    let device = ferrovis_core::Device::open(None).map_err(|e| e.to_string())?;
    let bufs = [0, 1].map(|_| device.alloc(64 * 16).unwrap());
    let vel = device.alloc(64 * 16).map_err(|e| e.to_string())?;
    for i in 0..64 {
        bufs[0].store_vec(i, host.positions[0][i]);
        vel.store_vec(i, host.velocities[i]);
    }

    let norm = |v: [f64; 3]| (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    let p0 = host.momentum();
    // Scale guard: the momentum magnitude carried by individual bodies, so a
    // near-zero net momentum does not make the bound vacuous.
    let scale: f64 = host
        .velocities
        .iter()
        .map(|v| norm([v[0] as f64, v[1] as f64, v[2] as f64]))
        .sum();
    let mut read = 0;
    for _ in 0..100 {
        host.step();
        integrate_device(&device, &bufs[read], &bufs[1 - read], &vel, &params);
        read = 1 - read;
    }
    let p1 = host.momentum();
    let drift = norm([p1[0] - p0[0], p1[1] - p0[1], p1[2] - p0[2]]);
    let bound = 1e-4 * (norm(p0) + scale);
    ensure!(drift <= bound, "momentum drift {drift:e} > {bound:e}");

    let device_pos: Vec<[f32; 4]> = (0..64).map(|i| bufs[read].load_vec(i)).collect();
    let device_vel: Vec<[f32; 4]> = (0..64).map(|i| vel.load_vec(i)).collect();
    let mut worst = 0.0f32;
    for (d, h) in device_pos.iter().zip(host.positions()).chain(device_vel.iter().zip(&host.velocities)) {
        for c in 0..4 {
            worst = worst.max((d[c] - h[c]).abs());
        }
    }
    ensure!(worst <= 1e-5, "device twin differs by {worst:e}");
    let pd = momentum(&device_pos, &device_vel);
    Ok(format!(
        "drift {drift:.2e} <= {bound:.2e}, twin max diff {worst:e}, device momentum {:.6}",
        norm(pd)
    ))
}

fn marker_math() -> Outcome {
    let mut rng = StdRng::seed_from_u64(21);
    for _ in 0..10_000 {
        let r = rng.random_range(0.5f32..8.0);
        let p = [rng.random_range(-16.0f32..16.0), rng.random_range(-16.0f32..16.0)];
        let q = [rng.random_range(-16.0f32..16.0), rng.random_range(-16.0f32..16.0)];
        let lhs = (marker_sdf(MarkerShape::Disc, p, r) - marker_sdf(MarkerShape::Disc, q, r)).abs() as f64;
        let dist = ((p[0] - q[0]) as f64).hypot((p[1] - q[1]) as f64);
        ensure!(lhs <= dist + 1e-5, "Lipschitz violated at {p:?}, {q:?}, r={r}: {lhs} > {dist}");
    }
    let style = MarkerStyle::filled(MarkerShape::Disc);
    let mut prev = f32::INFINITY;
    for k in -4000..=4000 {
        let d = k as f32 * 0.0025;
        let c = marker_coverage(d, &style).fill;
        ensure!(c <= prev, "coverage increases at d={d}");
        prev = c;
    }
    let white = [1.0; 4];
    let alpha_at = |d: f32| shade(marker_coverage(d, &style), white, white).1;
    for r in [1.0f32, 4.0, 16.0] {
        let inside = alpha_at(marker_sdf(MarkerShape::Disc, [0.0, 0.0], r));
        let outside = alpha_at(marker_sdf(MarkerShape::Disc, [r + 2.0, 0.0], r));
        ensure!(inside == 1.0, "centre alpha {inside} for r={r}");
        ensure!(outside == 0.0, "exterior alpha {outside} for r={r}");
    }
    Ok("10^4 pairs Lipschitz; coverage monotone; alpha 1 inside, 0 outside".into())
}

fn brownian_statistics() -> Outcome {
    let sigma = 0.01f32;
    let steps = 10_000u64;
    let run = || {
        let mut p = vec![[0.0f32; 3]];
        let mut sq = [0.0f64; 3];
        for it in 0..steps {
            let before = p[0];
            brownian_step(&mut p, sigma, it, 42);
            for a in 0..3 {
                let d = p[0][a] as f64 - before[a] as f64;
                sq[a] += d * d;
            }
        }
        (p[0], sq)
    };
    let (end, sq) = run();
    // Independent increments: the displacement variance is the summed
    // variance of the steps, estimated from this one trajectory.
    let expected = steps as f64 * (sigma as f64).powi(2);
    for (a, s) in sq.iter().enumerate() {
        ensure!((s / expected - 1.0).abs() <= 0.1, "axis {a}: {s:e} vs {expected:e}");
    }
    let (again, _) = run();
    ensure!(end.map(f32::to_bits) == again.map(f32::to_bits), "rerun differs: {end:?} vs {again:?}");
    Ok(format!(
        "variance ratio {:.3} / {:.3} / {:.3}; rerun bit-exact",
        sq[0] / expected,
        sq[1] / expected,
        sq[2] / expected
    ))
}

fn structured_grid() -> Outcome {
    let inst = headless(16, 16);
    for extent in [[1usize, 1, 1], [2, 2, 1], [5, 3, 2]] {
        let prop = inst.make_structured_grid(extent).map_err(|e| e.to_string())?;
        let mut oracle = Vec::new();
        for z in 0..extent[2] {
            for y in 0..extent[1] {
                for x in 0..extent[0] {
                    oracle.extend([x as f32, y as f32, z as f32].map(f32::to_bits));
                }
            }
        }
        let got: Vec<u32> = prop
            .source
            .read_f32(0, prop.size * 3)
            .map_err(|e| e.to_string())?
            .into_iter()
            .map(f32::to_bits)
            .collect();
        ensure!(prop.size * 3 == oracle.len() && got == oracle, "{extent:?} differs from nested loops");
    }
    inst.destroy();
    Ok("{1,1,1}, {2,2,1}, {5,3,2} bit-exact".into())
}

fn validation_matrix() -> Outcome {
    let inst = headless(16, 16);
    let other = headless(16, 16);
    let n = 4;
    let (_, pos) = inst.alloc_linear(n * 12).map_err(|e| e.to_string())?;
    let (_, idx) = inst.alloc_linear(n * 4).map_err(|e| e.to_string())?;
    let (_, foreign) = other.alloc_linear(n * 12).map_err(|e| e.to_string())?;
    let markers = || ViewDescription::new(ViewType::Markers, DomainType::Domain3D, n);
    let position = |alloc: &ferrovis_core::SharedAllocation, size| {
        PropertyDescription::new(alloc.clone(), size, FormatDescription::FLOAT3)
    };

    let cases: Vec<(&str, ViewDescription, fn(&Error) -> bool, ViewDescription)> = vec![
        (
            "MissingPosition",
            markers(),
            |e| matches!(e, Error::MissingPosition),
            markers().with_property(PropertyType::Position, position(&pos, n)),
        ),
        (
            "SizeMismatch",
            markers().with_property(PropertyType::Position, position(&pos, n - 1)),
            |e| matches!(e, Error::SizeMismatch { .. }),
            markers().with_property(PropertyType::Position, position(&pos, n)),
        ),
        (
            "BadIndexWidth",
            markers().with_property(PropertyType::Position, position(&pos, n).indexed(idx.clone(), n, 3)),
            |e| matches!(e, Error::BadIndexWidth(3)),
            markers().with_property(PropertyType::Position, position(&pos, n).indexed(idx.clone(), n, 4)),
        ),
        (
            "ForeignAllocation",
            markers().with_property(PropertyType::Position, position(&foreign, n)),
            |e| matches!(e, Error::ForeignAllocation(_)),
            markers().with_property(PropertyType::Position, position(&pos, n)),
        ),
    ];
    for (name, broken, expected, fixed) in cases {
        match inst.create_view(&broken) {
            Err(e) if expected(&e) => {}
            Err(e) => return Err(format!("{name}: got {e}")),
            Ok(_) => return Err(format!("{name}: broken description accepted")),
        }
        let view = inst.create_view(&fixed).map_err(|e| format!("{name}: fix rejected: {e}"))?;
        inst.destroy_view(&view);
    }
    inst.destroy();
    other.destroy();
    Ok("4 errors triggered and cured".into())
}

fn main() {
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let criteria: [(&str, fn() -> Outcome); 12] = [
        ("marker-math", marker_math),
        ("brownian-statistics", brownian_statistics),
        ("structured-grid", structured_grid),
        ("view-validation-matrix", validation_matrix),
        ("potts-assembly", potts_assembly),
        ("nbody-conservation", nbody_conservation),
        ("memory-accounting", memory_accounting),
        ("sync-mutual-exclusion", sync_mutual_exclusion),
        ("pingpong-atomicity", pingpong_atomicity),
        ("frame-limiter", frame_limiter),
        ("fps-degradation", fps_degradation),
        ("benchmark-ordinal", benchmark_ordinal),
    ];
    let mut failed = 0;
    let mut ran = 0;
    for (name, check) in criteria {
        if !filters.is_empty() && !filters.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        ran += 1;
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|panic| {
            let msg = panic
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {name} ({secs:.1}s): {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL {name} ({secs:.1}s): {why}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", ran - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
