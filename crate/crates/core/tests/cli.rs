//! End-to-end runs of the binary on small inputs.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures/ps_one_bubble")
        .join(name)
}

fn heisenvar(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_heisenvar"))
        .arg("--threads")
        .arg("1")
        .arg("--out")
        .arg(out)
        .args(args)
        .output()
        .unwrap()
}

fn json(path: PathBuf) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn decompose_fixture_finds_one_profile() {
    let dir = tempfile::tempdir().unwrap();
    let inputs: Vec<String> = (0..3)
        .map(|k| fixture(&format!("seq_{k:03}.hsf")).display().to_string())
        .collect();
    let mut args = vec!["decompose", "--stop-tol", "0.05", "--input"];
    args.extend(inputs.iter().map(String::as_str));
    let out = heisenvar(dir.path(), &args);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));

    let doc = json(dir.path().join("profiles.json"));
    let profiles = doc["result"]["profiles"].as_array().unwrap();
    assert_eq!(profiles.len(), 1);
    let scales: Vec<f64> = profiles[0]["scales"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_f64().unwrap())
        .collect();
    for (k, s) in scales.iter().enumerate() {
        let want = 0.3 * 1.5f64.powi(-(k as i32));
        assert!((s / want - 1.0).abs() < 0.05, "k = {k}: {s} vs {want}");
    }
    assert_eq!(doc["result"]["first_k"], 0);
    assert_eq!(doc["provenance"]["command"], "decompose");

    let csv = std::fs::read_to_string(dir.path().join("splitting.csv")).unwrap();
    let mut lines = csv.lines();
    assert!(lines.next().unwrap().starts_with("# {"));
    assert!(lines.next().unwrap().starts_with("k,norm_total,"));
    assert_eq!(lines.count(), 3);
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("never");
    let out = heisenvar(&out_dir, &["sweep", "--no-such-flag"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!out_dir.exists());
}

#[test]
fn config_file_matches_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("energy.json");
    let input = fixture("seq_001.hsf").display().to_string();
    std::fs::write(
        &cfg,
        serde_json::json!({ "input": [input.clone()], "eps": 0.25 }).to_string(),
    )
    .unwrap();

    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let out = heisenvar(&a, &["--config", cfg.to_str().unwrap(), "energy"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let out = heisenvar(&b, &["energy", "--input", &input, "--eps", "0.25"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));

    let (ja, jb) = (json(a.join("energy.json")), json(b.join("energy.json")));
    assert_eq!(ja["result"], jb["result"]);
    assert_eq!(ja["provenance"]["config_hash"], jb["provenance"]["config_hash"]);
}
