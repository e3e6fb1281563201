use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

const SMALL: &str = r#"
[rollout]
horizon = 3.0
[demos]
n_rollouts = 400
[barrier]
ell = 40
[train]
max_iters = 300
[verify]
pairs_per_ball = 500
lbar_pairs = 500
cross_check_pairs = 500
max_demos = 10
[evaluation]
n_rollouts = 4
"#;

fn rocbf(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rocbf"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn workspace() -> TempDir {
    let d = tempfile::tempdir().unwrap();
    fs::write(d.path().join("small.toml"), SMALL).unwrap();
    d
}

fn files_in(dir: &Path) -> Vec<String> {
    let mut v: Vec<String> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    v.sort();
    v
}

#[test]
fn missing_config_fails_without_outputs() {
    let d = tempfile::tempdir().unwrap();
    let out = rocbf(d.path(), &["--config", "absent.toml", "collect", "--out", "demos.txt"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(files_in(d.path()).is_empty());
}

#[test]
fn malformed_and_unknown_config_exit_two() {
    let d = tempfile::tempdir().unwrap();
    fs::write(d.path().join("bad.toml"), "x = [").unwrap();
    assert_eq!(rocbf(d.path(), &["--config", "bad.toml", "collect"]).status.code(), Some(2));
    assert_eq!(rocbf(d.path(), &["--set", "train.max_iterz=3", "collect"]).status.code(), Some(2));
    assert_eq!(rocbf(d.path(), &["--set", "barrier.ell=0", "collect"]).status.code(), Some(2));
    assert!(!d.path().join("demos.txt").exists());
}

#[test]
fn collection_is_deterministic() {
    let d = workspace();
    for name in ["a.txt", "b.txt"] {
        let out = rocbf(d.path(), &["--config", "small.toml", "collect", "--out", name]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let a = fs::read(d.path().join("a.txt")).unwrap();
    assert_eq!(a, fs::read(d.path().join("b.txt")).unwrap());
    // 400 runs, first 0.1 s at 0.02 s steps
    let rows = String::from_utf8(a).unwrap().lines().filter(|l| !l.starts_with('#')).count();
    assert_eq!(rows, 2000);
    let m: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(d.path().join("a.txt.manifest.json")).unwrap()).unwrap();
    assert_eq!(m["command"], "collect");
    assert_eq!(m["config_sha256"].as_str().unwrap().len(), 64);
}

#[test]
fn stages_pipeline_and_reruns() {
    let d = workspace();
    let p = d.path();
    let out = rocbf(p, &["--config", "small.toml", "pipeline", "--out-dir", "run", "--traces", "2"]);
    // the small configuration does not meet the success gates, but every artifact is written
    assert_eq!(out.status.code(), Some(5), "{}", String::from_utf8_lossy(&out.stderr));
    for f in [
        "barrier.txt",
        "bundle.json",
        "demos.txt",
        "evaluation.json",
        "manifest.json",
        "summary.json",
        "trace_000.txt",
        "trace_001.txt",
        "train_report.json",
        "verification.json",
    ] {
        assert!(p.join("run").join(f).exists(), "missing {f}");
    }

    // verification of the stored barrier reproduces the stored report
    let v = rocbf(
        p,
        &["--config", "small.toml", "verify", "--bundle", "run/bundle.json", "--barrier", "run/barrier.txt", "--out", "v.json"],
    );
    assert_eq!(v.status.code(), Some(5));
    assert_eq!(
        fs::read(p.join("v.json")).unwrap(),
        fs::read(p.join("run/verification.json")).unwrap()
    );

    // the stage commands reproduce the pipeline's bundle and barrier
    let s = rocbf(p, &["--config", "small.toml", "datasets", "--demos", "run/demos.txt", "--out", "b.json"]);
    assert!(s.status.success());
    assert_eq!(fs::read(p.join("b.json")).unwrap(), fs::read(p.join("run/bundle.json")).unwrap());
    let t = rocbf(p, &["--config", "small.toml", "train", "--bundle", "b.json", "--out", "h.txt"]);
    assert_eq!(t.status.code(), Some(5));
    assert_eq!(fs::read(p.join("h.txt")).unwrap(), fs::read(p.join("run/barrier.txt")).unwrap());

    let c = rocbf(
        p,
        &["--config", "small.toml", "compare", "--barrier", "run/barrier.txt", "--n-ce", "5", "--n-theta", "5", "--out", "g.txt"],
    );
    assert!(c.status.success());
    let grid = fs::read_to_string(p.join("g.txt")).unwrap();
    assert_eq!(grid.lines().count(), 26);

    let r = rocbf(
        p,
        &["--config", "small.toml", "rollout", "--barrier", "run/barrier.txt", "--ce0", "-0.3", "--out", "tr.txt"],
    );
    assert!(r.status.success());
    let tr = fs::read_to_string(p.join("tr.txt")).unwrap();
    assert!(tr.starts_with("t exo x0"));
    assert_eq!(tr.lines().count(), 1 + 150);
}

#[test]
fn strict_dynamics_margin_fails_training_gate() {
    let d = workspace();
    let p = d.path();
    assert!(rocbf(p, &["--config", "small.toml", "collect"]).status.success());
    assert!(rocbf(p, &["--config", "small.toml", "datasets"]).status.success());
    let out = rocbf(p, &["--config", "small.toml", "--set", "train.gamma_dyn=10", "train"]);
    assert_eq!(out.status.code(), Some(5));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("dynamics"), "{err}");
    assert!(p.join("barrier.txt").exists());
}

#[test]
fn expert_rollout_needs_no_barrier() {
    let d = workspace();
    let out = rocbf(
        d.path(),
        &["--config", "small.toml", "rollout", "--controller", "expert", "--ce0", "0.5", "--out", "e.txt"],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let missing = rocbf(d.path(), &["--config", "small.toml", "rollout", "--barrier", "none.txt"]);
    assert_eq!(missing.status.code(), Some(3));
}
