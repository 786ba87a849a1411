use std::path::Path;
use std::process::{Command, Output};

fn run(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fracspec"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .unwrap()
}

fn configs() -> std::path::PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

#[test]
fn eigen_writes_table_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = configs().join("rectangle.cfg");
    let o = run(&["eigen", "--config", cfg.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(dir.path().join("eigenvalues.csv")).unwrap();
    assert!(csv.starts_with("n,lambda,trace_0,"));
    assert_eq!(csv.lines().count(), 17);
    let manifest = std::fs::read_to_string(dir.path().join("manifest.txt")).unwrap();
    assert!(manifest.contains("eigen") && manifest.contains("eigenvalues.csv"));
}

#[test]
fn solve_and_compat_with_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = configs().join("incompatible.cfg");
    let cfg = cfg.to_str().unwrap();
    let set = ["--set", "solver.modes=8", "--set", "solver.mesh=80", "--set", "solver.steps=20"];
    let mut args = vec!["solve", "--config", cfg];
    args.extend(set);
    let o = run(&args, dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let modes = std::fs::read_to_string(dir.path().join("modes.csv")).unwrap();
    assert!(modes.lines().nth(1).unwrap().starts_with("t,u_1,"));
    assert!(dir.path().join("field.csv").exists());

    let mut args = vec!["check-compat", "--config", cfg];
    args.extend(set);
    let o = run(&args, dir.path());
    assert_eq!(o.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&o.stdout).contains("verdict: FAIL"));
    assert!(dir.path().join("compat.csv").exists());
}

#[test]
fn ml_eval_without_config() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["ml-eval", "--set", "ml.alpha=1", "--set", "ml.z=0,1"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(dir.path().join("ml.csv")).unwrap();
    let e: f64 = csv.lines().nth(2).unwrap().rsplit(',').next().unwrap().parse().unwrap();
    assert!((e - std::f64::consts::E).abs() < 1e-14);
}

#[test]
fn invalid_input_exits_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = configs().join("compatible.cfg");
    let o = run(&["solve", "--config", cfg.to_str().unwrap(), "--set", "problem.alpha=1"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(!o.stderr.is_empty());
    // rejected before anything runs
    assert!(!dir.path().join("manifest.txt").exists());
    let o = run(&["solve", "--bogus"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    let o = run(&["solve", "--config", "/nonexistent/x.cfg"], dir.path());
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn identical_runs_give_identical_files() {
    let cfg = configs().join("monitor_c1a.cfg");
    let args = [
        "solve", "--config", cfg.to_str().unwrap(),
        "--set", "solver.modes=6", "--set", "solver.mesh=60", "--set", "solver.steps=30",
        "--set", "data.f=sin(t), 1 - cos(t)",
    ];
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for d in [&a, &b] {
        assert_eq!(run(&args, d.path()).status.code(), Some(0));
    }
    for f in ["modes.csv", "field.csv"] {
        let x = std::fs::read(a.path().join(f)).unwrap();
        assert_eq!(x, std::fs::read(b.path().join(f)).unwrap(), "{f}");
    }
}
