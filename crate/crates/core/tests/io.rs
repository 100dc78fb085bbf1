use std::path::Path;
use std::process::Command;

use iga_adr::config::RunConfig;
use iga_adr::output::{csv_string, sample_fields, vtk_string};
use iga_adr::time_integration::run_simulation;

const BIN: &str = env!("CARGO_BIN_EXE_iga-adr");

fn golden_run() -> (String, String) {
    let cfg: RunConfig = "problem = exact-system\ndegree = 2\nnx = 4\nny = 4\ndt = 0.01\nt_end = 0.01\nsample_n = 5\n"
        .parse()
        .unwrap();
    let problem = cfg.problem_spec().unwrap();
    let disc = cfg.discretization(&problem).unwrap();
    let result = run_simulation(&problem, &disc, cfg.solver_config(&problem), &mut |_| Ok(())).unwrap();
    assert_eq!(result.state.step, 1);
    let field = sample_fields(&disc, &result.state.u, &result.state.v, cfg.sample_n).unwrap();
    (vtk_string(&field, "exact-system step 1"), csv_string(&field))
}

fn check_golden(name: &str, actual: &str) {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name);
    if std::env::var_os("IGA_UPDATE_GOLDEN").is_some() {
        std::fs::write(&path, actual).unwrap();
    }
    let expected = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    assert!(expected == actual, "{} differs from the frozen output", path.display());
}

#[test]
fn golden_snapshot_one_step() {
    let (vtk, csv) = golden_run();
    check_golden("exact_system_step1.vtk", &vtk);
    check_golden("exact_system_step1.csv", &csv);
}

#[test]
fn csv_and_vtk_agree() {
    let (vtk, csv) = golden_run();
    let lines: Vec<&str> = vtk.lines().collect();
    let scalars = |name: &str| -> Vec<f64> {
        let start = lines.iter().position(|l| *l == format!("SCALARS {name} double 1")).unwrap() + 2;
        lines[start..start + 25].iter().map(|l| l.parse().unwrap()).collect()
    };
    let (u, v) = (scalars("u"), scalars("v"));
    let rows: Vec<Vec<f64>> = csv
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(|x| x.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 25);
    let pts_start = lines.iter().position(|l| l.starts_with("POINTS")).unwrap() + 1;
    for (k, row) in rows.iter().enumerate() {
        let p: Vec<f64> = lines[pts_start + k].split(' ').map(|x| x.parse().unwrap()).collect();
        assert!((p[0] - row[0]).abs() <= 1e-12 && (p[1] - row[1]).abs() <= 1e-12);
        assert!((u[k] - row[2]).abs() <= 1e-12 && (v[k] - row[3]).abs() <= 1e-12);
    }
}

#[test]
fn config_file_roundtrip_on_disk() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("a.cfg");
    std::fs::write(&path, "problem = gray-scott\nparam.alpha = 0.03\n").unwrap();
    let a = RunConfig::load(&path).unwrap();
    assert_eq!(a.params["alpha"], 0.03);
    let b_path = dir.path().join("b.cfg");
    a.save(&b_path).unwrap();
    assert_eq!(RunConfig::load(&b_path).unwrap(), a);
    assert!(matches!(
        RunConfig::load(dir.path().join("missing.cfg")),
        Err(iga_adr::Error::Io { .. })
    ));
}

#[test]
fn cli_simulate_writes_snapshots() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(
        &cfg,
        "problem = schnakenberg\ndegree = 2\nnx = 4\nny = 4\ndt = 0.01\nt_end = 0.03\nsnapshot_every = 2\nsample_n = 6\n",
    )
    .unwrap();
    let out = dir.path().join("out");
    let status = Command::new(BIN)
        .args(["simulate", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .env("IGA_THREADS", "1")
        .output()
        .unwrap();
    assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
    for step in [0, 2, 3] {
        let vtk = std::fs::read_to_string(out.join(format!("snapshot_{step:06}.vtk"))).unwrap();
        assert!(vtk.contains("DIMENSIONS 6 6 1"));
        assert!(out.join(format!("snapshot_{step:06}.csv")).exists());
    }
    assert!(!out.join("snapshot_000001.vtk").exists());
    let saved = RunConfig::load(out.join("run.cfg")).unwrap();
    assert_eq!(saved.out_dir, out);
}

#[test]
fn cli_exit_codes() {
    let run = |args: &[&str]| Command::new(BIN).args(args).output().unwrap().status.code();
    assert_eq!(run(&["info"]), Some(0));
    assert_eq!(run(&["--help"]), Some(0));
    assert_eq!(run(&["frobnicate"]), Some(1));
    assert_eq!(run(&["converge", "--problem", "exact-system", "--degrees", "1,x", "--meshes", "4"]), Some(1));
    assert_eq!(run(&["converge", "--problem", "gray-scott", "--degrees", "1", "--meshes", "4"]), Some(1));
    assert_eq!(run(&["converge", "--problem", "exact-system", "--degrees", "1", "--meshes", "4", "--dt-rule", "cubic"]), Some(1));

    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.cfg");
    std::fs::write(&bad, "problem = exact-system\ndegree = 0\n").unwrap();
    assert_eq!(run(&["simulate", "--config", bad.to_str().unwrap()]), Some(2));
    assert_eq!(run(&["simulate", "--config", dir.path().join("none.cfg").to_str().unwrap()]), Some(2));
    let threads = Command::new(BIN).arg("info").env("IGA_THREADS", "zero").output().unwrap();
    assert_eq!(threads.status.code(), Some(1));
}

#[test]
fn cli_converge_report() {
    let out = Command::new(BIN)
        .args(["converge", "--problem", "exact-system", "--degrees", "2", "--meshes", "4,8", "--dt-rule", "fixed:0.05"])
        .output()
        .unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("p = 2: slope L1 ="));
    assert_eq!(text.lines().count(), 4);
}
