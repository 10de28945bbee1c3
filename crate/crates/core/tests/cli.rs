use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_hlattice"))
}

fn smoke() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/heisenberg_smoke.json")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn small_config(dir: &Path) -> PathBuf {
    let mut v: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(smoke()).unwrap()).unwrap();
    v["diagnostics"] = serde_json::json!([
        { "suite": "martingale", "replicas": 50, "t": 0.2 },
        { "suite": "ergodic", "replicas": 40 },
        { "suite": "product_tv", "replicas": 200, "pilot": 2000, "ns": [1, 10, 50], "target_n": 50, "target_bound": 0.0 }
    ]);
    let p = dir.join("small.json");
    std::fs::write(&p, serde_json::to_string_pretty(&v).unwrap()).unwrap();
    p
}

#[test]
fn list_claims_prints_nine_rows() {
    let o = bin().arg("list-claims").output().unwrap();
    assert!(o.status.success());
    let text = stdout(&o);
    let suites = [
        "lyapunov",
        "kolmogorov",
        "tail_mass",
        "box_consistency",
        "ic_continuity",
        "ergodic",
        "martingale",
        "tightness",
        "product_tv",
    ];
    for s in suites {
        assert!(
            text.lines().any(|l| l.starts_with(s)),
            "missing {s}:\n{text}"
        );
    }
}

#[test]
fn validate_accepts_smoke_config() {
    let o = bin()
        .arg("validate")
        .arg("--config")
        .arg(smoke())
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    assert!(text.contains("config_hash"));
    assert!(!text.contains("violated"));
}

#[test]
fn validate_rejects_unit_weights() {
    let dir = tempfile::tempdir().unwrap();
    let mut v: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(smoke()).unwrap()).unwrap();
    v["weights"] = serde_json::json!({
        "kind": "explicit", "delta": 0.5, "K": 1.0,
        "shell_u": vec![1.0; 60], "shell_v": vec![1.0; 60]
    });
    let p = dir.path().join("bad.json");
    std::fs::write(&p, v.to_string()).unwrap();
    let o = bin()
        .arg("validate")
        .arg("--config")
        .arg(&p)
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("H4"));
}

#[test]
fn control_reports_small_endpoint_error() {
    let o = bin()
        .args([
            "control", "--from", "0,0,0", "--to", "1,-1,0.5", "--t", "1", "--lambda", "1",
        ])
        .output()
        .unwrap();
    assert!(o.status.success());
    let text = stdout(&o);
    let err: f64 = text
        .lines()
        .find_map(|l| l.strip_prefix("endpoint_error = "))
        .unwrap()
        .parse()
        .unwrap();
    assert!(err <= 1e-6, "{err}");
}

#[test]
fn simulate_writes_trajectory_and_metadata() {
    let dir = tempfile::tempdir().unwrap();
    let o = bin()
        .arg("simulate")
        .arg("--config")
        .arg(smoke())
        .arg("--out-dir")
        .arg(dir.path())
        .args(["--init", "0.5,-0.5,0.25"])
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(dir.path().join("trajectory_n3.csv")).unwrap();
    assert!(csv.lines().count() > 50);
    let meta: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(dir.path().join("trajectory_n3.meta.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(meta["n"], 3);
    assert!(meta["blow_up"].is_null());
}

#[test]
fn repeated_runs_write_identical_verdicts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let mut files = Vec::new();
    for (i, workers) in ["1", "2"].iter().enumerate() {
        let out = dir.path().join(format!("run{i}"));
        let o = bin()
            .arg("run")
            .arg("--config")
            .arg(&cfg)
            .args(["--workers", workers])
            .arg("--out-dir")
            .arg(&out)
            .output()
            .unwrap();
        assert!(
            o.status.code().is_some_and(|c| c <= 1),
            "{}",
            String::from_utf8_lossy(&o.stderr)
        );
        files.push(std::fs::read(out.join("verdicts.jsonl")).unwrap());
        assert!(out.join("metadata.json").exists());
        assert!(out.join("config.json").exists());
    }
    assert!(!files[0].is_empty());
    assert_eq!(files[0], files[1]);
}

#[test]
fn suite_filter_and_seed_override() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let run = |seed: &str| {
        let o = bin()
            .arg("run")
            .arg("--config")
            .arg(&cfg)
            .args(["--suite", "martingale", "--seed", seed])
            .output()
            .unwrap();
        stdout(&o)
    };
    let a = run("7");
    assert!(a
        .lines()
        .filter(|l| l.starts_with('{'))
        .all(|l| l.contains("\"suite\":\"martingale\"")));
    assert_ne!(a, run("8"));
}

#[test]
fn smoke_config_passes() {
    let dir = tempfile::tempdir().unwrap();
    let o = bin()
        .arg("run")
        .arg("--config")
        .arg(smoke())
        .arg("--out-dir")
        .arg(dir.path())
        .output()
        .unwrap();
    let text = stdout(&o);
    assert_eq!(o.status.code(), Some(0), "{text}");
    assert!(!text.contains("\"outcome\":\"fail\""));
}
