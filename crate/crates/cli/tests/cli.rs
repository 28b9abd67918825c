use std::fs;
use std::process::Command;

fn piezobeam() -> Command {
    Command::new(env!("CARGO_BIN_EXE_piezobeam"))
}

const SHORT: [&str; 6] = ["--override", "n=16", "--override", "t_final=0.5", "--override", "snapshot_times=[0.0, 0.5]"];

#[test]
fn run_writes_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out = piezobeam().arg("run").args(SHORT).arg("--out").arg(dir.path()).output().unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["timeseries.csv", "summary.json", "config.toml", "snapshot_t0.000000.csv", "snapshot_t0.500000.csv"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    let snap = fs::read_to_string(dir.path().join("snapshot_t0.500000.csv")).unwrap();
    assert!(snap.starts_with("x,v,w,v_t,w_t\n"));
}

#[test]
fn config_file_and_overrides_combine() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("mt.toml");
    fs::write(&cfg, "model = \"mt-nl\"\nn = 16\nt_final = 0.5\nsnapshot_times = []\n[gains]\nmode = \"partial\"\n").unwrap();
    let out = piezobeam()
        .args(["run", "--config"])
        .arg(&cfg)
        .args(["--override", "integrator.dt=5e-4", "--out"])
        .arg(dir.path().join("o"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let header = fs::read_to_string(dir.path().join("o/timeseries.csv")).unwrap();
    assert!(header.starts_with("t,E_total,E_kinetic,E_stretch,E_bend,E_shear,E_axial,E_visc_dissip,V,m,g,vdot_tip,wdot_tip,psidot_tip\n"));
    let echo = fs::read_to_string(dir.path().join("o/config.toml")).unwrap();
    assert!(echo.contains("dt = 0.0005") && echo.contains("mode = \"partial\""));
}

#[test]
fn identical_runs_write_identical_csv() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [&a, &b] {
        let s = piezobeam().arg("run").args(SHORT).arg("--out").arg(d.path()).status().unwrap();
        assert!(s.success());
    }
    let read = |d: &tempfile::TempDir| fs::read(d.path().join("timeseries.csv")).unwrap();
    assert_eq!(read(&a), read(&b));
}

#[test]
fn config_errors_exit_with_2() {
    for args in [
        vec!["run", "--override", "n=7"],
        vec!["run", "--override", "unknown_key=1"],
        vec!["run", "--override", "model=eb-lin", "--override", "gains.continuous_law=true"],
        vec!["run", "--config", "/nonexistent/scenario.toml"],
        vec!["converge", "--levels", "32"],
    ] {
        let out = piezobeam().args(&args).output().unwrap();
        assert_eq!(out.status.code(), Some(2), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    }
}

#[test]
fn solver_failure_exits_with_3() {
    // A Newton budget of one iteration cannot converge a nonlinear step.
    let out = piezobeam()
        .arg("run")
        .args(SHORT)
        .args(["--override", "integrator.newton_max_iter=1", "--override", "integrator.newton_tol=1e-16"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn converge_reports_orders() {
    let dir = tempfile::tempdir().unwrap();
    let out = piezobeam()
        .args(["converge", "--kind", "time", "--levels", "0.02,0.01,0.005", "--t-end", "0.2"])
        .args(["--override", "model=eb-lin", "--override", "n=16", "--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value = serde_json::from_slice(&fs::read(dir.path().join("convergence.json")).unwrap()).unwrap();
    let order = report["overall"]["order"].as_f64().unwrap();
    assert!((order - 2.0).abs() < 0.15, "{order}");
}

#[test]
fn sweep_picks_a_best_triple() {
    let out = piezobeam()
        .args(["sweep", "--values", "0.5,2"])
        .args(SHORT)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["entries"].as_array().unwrap().len(), 8);
    assert!(report["best"]["gains"].is_array());
}

#[test]
fn quick_check_suite_passes() {
    let out = piezobeam().arg("check").output().unwrap();
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert_eq!(out.status.code(), Some(0), "{stdout}");
    assert!(stdout.lines().all(|l| l.starts_with("[PASS]")), "{stdout}");
}
