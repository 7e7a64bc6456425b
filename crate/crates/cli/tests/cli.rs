use std::path::Path;
use std::process::{Command, Output};

fn thermoform(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_thermoform")).args(args).output().expect("binary runs")
}

fn read(dir: &Path, name: &str) -> String {
    std::fs::read_to_string(dir.join(name)).unwrap()
}

#[test]
fn validate_writes_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = thermoform(&["validate", "--out", dir.path().to_str().unwrap()]);
    assert!(out.status.success());
    let report: serde_json::Value = serde_json::from_str(&read(dir.path(), "hypotheses.json")).unwrap();
    assert_eq!(report["deg"], 2);
    assert!(dir.path().join("validate.manifest.json").exists());
}

#[test]
fn doubling_spectrum_at_level_ten() {
    let dir = tempfile::tempdir().unwrap();
    let out = thermoform(&["spectrum", "--level", "10", "--out", dir.path().to_str().unwrap()]);
    assert!(out.status.success());
    let text = read(dir.path(), "spectrum.csv");
    let row = text.lines().find(|l| l.starts_with("10,")).unwrap();
    let lambda: f64 = row.split(',').nth(2).unwrap().parse().unwrap();
    assert!((lambda - 2.0).abs() <= 1e-10);
}

#[test]
fn fluctuations_are_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("cos.toml");
    std::fs::write(&config, "[potential]\nkind = \"cosine\"\namplitude = 0.3\n").unwrap();
    let mut outputs = Vec::new();
    for run in ["a", "b"] {
        let out_dir = dir.path().join(run);
        let status = thermoform(&[
            "fluctuations",
            "--config",
            config.to_str().unwrap(),
            "--n",
            "14",
            "--samples",
            "10000",
            "--seed",
            "7",
            "--out",
            out_dir.to_str().unwrap(),
        ])
        .status;
        assert!(status.success());
        outputs.push((read(&out_dir, "fluctuations.csv"), read(&out_dir, "fluctuations_hist.csv")));
    }
    assert_eq!(outputs[0], outputs[1]);
}

#[test]
fn zero_potential_fluctuations_is_a_numerical_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = thermoform(&["fluctuations", "--n", "8", "--samples", "100", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn config_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("bad.toml");
    std::fs::write(&config, "[constants]\nzeta = 2.0\n").unwrap();
    let out = thermoform(&["validate", "--config", config.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    let out = thermoform(&["validate", "--config", "/nonexistent/x.toml"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn strict_mode_fails_on_a_failed_check() {
    let dir = tempfile::tempdir().unwrap();
    // the entropy check misses by the finite-n bias at these levels
    let out = thermoform(&["returns", "--n", "10", "--samples", "2000", "--strict", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));
    assert!(dir.path().join("returns.manifest.json").exists());
}

#[test]
fn report_on_empty_directory_warns() {
    let dir = tempfile::tempdir().unwrap();
    let out = thermoform(&["report", "--out", dir.path().to_str().unwrap()]);
    assert!(out.status.success());
    let md = read(dir.path(), "report.md");
    assert!(md.contains("No experiment artifacts found"));
    assert!(md.contains("no artifacts for `hitting`"));
}

#[test]
fn report_lists_spectrum_and_hitting_rows() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    assert!(thermoform(&["spectrum", "--out", d]).status.success());
    assert!(thermoform(&["hitting", "--samples", "1000", "--out", d]).status.success());
    assert!(thermoform(&["report", "--out", d]).status.success());
    let md = read(dir.path(), "report.md");
    assert!(md.contains("| spectrum | spectral gap and conformal measure |"));
    assert!(md.contains("| hitting | exponential hitting-time law |"));
    let verdict: serde_json::Value = serde_json::from_str(&read(dir.path(), "report.json")).unwrap();
    assert_eq!(verdict["experiments"].as_array().unwrap().len(), 2);
}
