// The command-line binary: exit codes, outputs and manifests.

use std::path::Path;
use std::process::{Command, Output};

const SMALL: [&str; 6] = ["--set", "dataset.n=16", "--set", "model.width=200", "--set", "max_steps=200"];

fn nqm(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nqm"))
        .args(args)
        .arg("--out")
        .arg(out)
        .env_remove("NQM_THREADS")
        .output()
        .expect("binary runs")
}

fn files_with(dir: &Path, suffix: &str) -> Vec<std::path::PathBuf> {
    let mut found: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.to_string_lossy().ends_with(suffix))
        .collect();
    found.sort();
    found
}

#[test]
fn thresholds_prints_json() {
    let dir = tempfile::tempdir().unwrap();
    let out = nqm(&[&["thresholds"][..], &SMALL].concat(), dir.path());
    assert_eq!(out.status.code(), Some(0));
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let eta_c = report["eta_critical"].as_f64().unwrap();
    let eta_max = report["eta_max_estimate"].as_f64().unwrap();
    assert!((eta_max - 2.0 * eta_c).abs() < 1e-12 * eta_max);
    let per = report["per_direction_critical"].as_array().unwrap();
    assert_eq!(per.len(), 2);
    assert!(per[0].as_f64().unwrap() <= per[1].as_f64().unwrap());
    assert_eq!(files_with(dir.path(), ".json").len(), 2);
}

#[test]
fn subcritical_simulation_decreases_strictly() {
    let dir = tempfile::tempdir().unwrap();
    let args = [&["simulate"][..], &SMALL, &["--set", r#"eta_grid={"critical":[0.5]}"#]].concat();
    let out = nqm(&args, dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = files_with(dir.path(), "-eta0.csv");
    assert_eq!(csv.len(), 1);
    let text = std::fs::read_to_string(&csv[0]).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "step,loss,lambda1,lambda2,pi1_loss,pi2_loss,param_disp,rf_norm,rk_norm");
    let loss: Vec<f64> = lines.map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect();
    assert!(loss.len() > 10);
    assert!(loss.windows(2).all(|w| w[1] < w[0]));
}

#[test]
fn empty_sweep_writes_headers_only() {
    let dir = tempfile::tempdir().unwrap();
    let args = [&["sweep"][..], &SMALL, &["--set", r#"eta_grid={"values":[]}"#]].concat();
    let out = nqm(&args, dir.path());
    assert_eq!(out.status.code(), Some(0));
    let curves = std::fs::read_to_string(&files_with(dir.path(), "-curves.csv")[0]).unwrap();
    assert_eq!(curves, "family,eta,best_test_loss,stddev\n");
    let traces = std::fs::read_to_string(&files_with(dir.path(), "-traces.csv")[0]).unwrap();
    assert_eq!(traces, "eta,step,loss,lambda1,lambda2\n");
}

#[test]
fn config_errors_exit_two_with_field() {
    let dir = tempfile::tempdir().unwrap();
    let out = nqm(&["sweep", "--set", "model.depth=3"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("model.depth"));

    let out = nqm(&["sweep", "--set", "dataset.n=7"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("dataset.n"));

    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"dataset": {"kind": "synthetic-1d", "n": 8, "seed": 0}, "surprise": 1}"#).unwrap();
    let out = nqm(&["sweep", "--config", bad.to_str().unwrap()], dir.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn runtime_failures_exit_three_with_run_id() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.csv");
    let set = format!(r#"dataset={{"kind":"csv-twoclass","path":"{}","n_train":8,"n_test":8}}"#, missing.display());
    let out = nqm(&["thresholds", "--set", &set], dir.path());
    assert_eq!(out.status.code(), Some(3));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("error in run thresholds-"), "{err}");
}

#[test]
fn diverged_cells_are_not_failures() {
    let dir = tempfile::tempdir().unwrap();
    let args = [&["sweep"][..], &SMALL, &["--set", r#"eta_grid={"critical":[2.6]}"#, "--set", "model.family=linearized"]].concat();
    let out = nqm(&args, dir.path());
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stdout).contains("regime=divergent"));
}

#[test]
fn manifest_reproduces_every_file() {
    let first = tempfile::tempdir().unwrap();
    let args = [&["sweep"][..], &SMALL, &["--set", r#"eta_grid={"critical":[0.5,1.5]}"#, "--seeds", "2"]].concat();
    assert_eq!(nqm(&args, first.path()).status.code(), Some(0));
    let manifest_path = &files_with(first.path(), "-manifest.json")[0];
    let manifest: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(manifest_path).unwrap()).unwrap();
    let listed: Vec<&str> = manifest["files"].as_array().unwrap().iter().map(|f| f["path"].as_str().unwrap()).collect();
    let mut on_disk: Vec<String> = std::fs::read_dir(first.path())
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .filter(|n| !n.ends_with("-manifest.json"))
        .collect();
    on_disk.sort();
    let mut sorted = listed.clone();
    sorted.sort();
    assert_eq!(sorted, on_disk);
    assert_eq!(manifest["seeds"], serde_json::json!([0, 1]));

    let second = tempfile::tempdir().unwrap();
    let out = nqm(&["sweep", "--config", manifest_path.to_str().unwrap()], second.path());
    assert_eq!(out.status.code(), Some(0));
    for name in listed {
        let a = std::fs::read(first.path().join(name)).unwrap();
        let b = std::fs::read(second.path().join(name)).unwrap();
        assert_eq!(a, b, "{name} differs");
    }
}

#[test]
fn verify_passes_every_check() {
    let dir = tempfile::tempdir().unwrap();
    let out = nqm(&["verify"], dir.path());
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.lines().count() >= 7);
    assert!(text.lines().all(|l| l.starts_with("PASS ")), "{text}");
}

#[test]
fn studies_write_their_tables() {
    let dir = tempfile::tempdir().unwrap();
    let width = nqm(
        &["width-study", "--set", r#"dataset={"kind":"single","d":5,"label":1,"seed":1000}"#, "--set", "width_grid=[200,400]", "--set", "max_steps=300"],
        dir.path(),
    );
    assert_eq!(width.status.code(), Some(0), "{}", String::from_utf8_lossy(&width.stderr));
    let gamma = nqm(&["gamma-study", "--set", "max_steps=200", "--seeds", "1"], dir.path());
    assert_eq!(gamma.status.code(), Some(0));
    let eigen = nqm(&[&["eigenspace-study"][..], &SMALL, &["--set", r#"eta_grid={"critical":[1.4]}"#]].concat(), dir.path());
    assert_eq!(eigen.status.code(), Some(0));
    let headers: Vec<String> = files_with(dir.path(), ".csv")
        .iter()
        .map(|p| std::fs::read_to_string(p).unwrap().lines().next().unwrap().to_string())
        .collect();
    assert!(headers.iter().any(|h| h.starts_with("width,mean_peak_loss")));
    assert!(headers.iter().any(|h| h.starts_with("gamma,eta,mean_peak_loss")));
    assert!(headers.iter().any(|h| h == "step,p1_rf_p1,p1_rk_p1,lambda1,pi1_loss,loss"));
}

#[test]
fn bad_arguments_use_the_usage_exit_code() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(nqm(&["frobnicate"], dir.path()).status.code(), Some(2));
}
