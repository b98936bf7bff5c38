use std::path::Path;
use std::process::Command;

fn bench() -> Command {
    Command::new(env!("CARGO_BIN_EXE_bench"))
}

fn sample() -> Command {
    Command::new(env!("CARGO_BIN_EXE_sample"))
}

fn ppm_size(path: &Path) -> (u32, u32) {
    let data = std::fs::read(path).unwrap();
    let header = String::from_utf8_lossy(&data[..32.min(data.len())]).to_string();
    let mut parts = header.split_whitespace();
    assert_eq!(parts.next(), Some("P6"));
    let w = parts.next().unwrap().parse().unwrap();
    let h = parts.next().unwrap().parse().unwrap();
    (w, h)
}

#[test]
fn bench_appends_csv_rows_and_dumps_pipelines() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("out.csv");
    let shaders = dir.path().join("shaders");
    let ppm = dir.path().join("frame.ppm");
    for mode in ["sync", "base"] {
        let out = bench()
            .args(["--mode", mode, "--n", "500", "--iters", "12", "--resolution", "96x64", "--headless", "--seed", "4"])
            .arg("--out")
            .arg(&csv)
            .arg("--dump-shaders")
            .arg(&shaders)
            .arg("--ppm")
            .arg(&ppm)
            .output()
            .unwrap();
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        assert!(String::from_utf8_lossy(&out.stdout).starts_with(mode));
    }
    let text = std::fs::read_to_string(&csv).unwrap();
    let lines: Vec<_> = text.lines().collect();
    assert_eq!(lines.len(), 3);
    assert!(lines[0].starts_with("mode,n,width,height,"));
    assert!(lines[1].starts_with("sync,500,96,64,0,"));
    assert!(lines[2].starts_with("base,500,96,64,0,0.0,"));
    let dumped: Vec<_> = std::fs::read_dir(&shaders).unwrap().collect();
    assert_eq!(dumped.len(), 1);
    assert_eq!(ppm_size(&ppm), (96, 64));
}

#[test]
fn bench_rejects_bad_arguments() {
    for args in [
        &["--mode", "turbo"][..],
        &["--resolution", "0x10"],
        &["--n", "0"],
        &["--iters", "0"],
        &["--sigma", "-1"],
    ] {
        let out = bench().args(args).arg("--headless").output().unwrap();
        assert!(!out.status.success(), "{args:?} accepted");
    }
}

#[test]
fn samples_run_headless() {
    let dir = tempfile::tempdir().unwrap();
    let runs: [&[&str]; 3] = [
        &["potts", "--l", "16", "--q", "4", "--t", "0.7", "--iters", "5"],
        &["nbody", "--n", "64", "--iters", "5", "--dt", "0.01", "--damping", "1", "--softening", "0.2"],
        &["mesh", "--builtin", "torus", "--amplitude", "0.05", "--iters", "5"],
    ];
    for args in runs {
        let ppm = dir.path().join(format!("{}.ppm", args[0]));
        let out = sample()
            .args(args)
            .args(["--headless", "--seed", "2", "--target-fps", "0", "--size", "80x60"])
            .arg("--ppm")
            .arg(&ppm)
            .output()
            .unwrap();
        assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
        let stdout = String::from_utf8_lossy(&out.stdout);
        assert!(stdout.contains("5 iterations") && stdout.contains("5 critical sections"), "{stdout}");
        assert_eq!(ppm_size(&ppm), (80, 60));
    }
}

#[test]
fn sample_loads_obj_and_reports_parse_errors() {
    let dir = tempfile::tempdir().unwrap();
    let good = dir.path().join("tri.obj");
    std::fs::write(&good, "v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 3\n").unwrap();
    let out = sample()
        .args(["mesh", "--iters", "2", "--headless", "--target-fps", "0"])
        .arg("--obj")
        .arg(&good)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let bad = dir.path().join("bad.obj");
    std::fs::write(&bad, "v 0 0 0\nf 1 2 3\n").unwrap();
    let out = sample().args(["mesh", "--headless"]).arg("--obj").arg(&bad).output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("bad.obj:2"));

    let out = sample().args(["potts", "--l", "7", "--headless"]).output().unwrap();
    assert!(!out.status.success(), "odd lattice accepted");
}
