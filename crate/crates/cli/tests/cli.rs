use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn echoloop(args: &[&str], extra: &[&Path]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_echoloop"))
        .args(args)
        .args(extra)
        .output()
        .unwrap()
}

const SMALL: [&str; 10] = ["--n", "20", "--m", "100", "--c", "4", "--links", "40", "--steps", "8"];

#[test]
fn simulate_writes_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    let mut args = vec!["simulate", "--seed", "1,2", "--export-states"];
    args.extend(SMALL);
    args.push("--out-dir");
    let o = echoloop(&args, &[&out]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["metrics.csv", "summary.json", "final_states_seed1.csv", "final_states_seed2.csv"] {
        assert!(out.join(f).exists(), "{f} missing");
    }
}

#[test]
fn invalid_parameters_exit_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    let mut args = vec!["simulate", "--seed", "1", "--gamma", "2"];
    args.extend(SMALL);
    args.push("--out-dir");
    let o = echoloop(&args, &[tmp.path()]);
    assert_eq!(o.status.code(), Some(2));

    let o = echoloop(&["simulate", "--out-dir"], &[tmp.path()]);
    assert_eq!(o.status.code(), Some(2), "missing seed");
}

#[test]
fn missing_input_file_exits_with_one() {
    let tmp = tempfile::tempdir().unwrap();
    let nope = tmp.path().join("nope.csv");
    let nope = nope.to_str().unwrap();
    let o = echoloop(
        &["simulate", "--seed", "1", "--items", nope, "--interactions", nope, "--trust", nope, "--out-dir"],
        &[tmp.path()],
    );
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn config_file_and_flags_combine() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("c.toml");
    fs::write(&cfg, "n = 20\nm = 100\nc = 4\nlinks = 40\nsteps = 6\nalpha = 1.0\n").unwrap();
    let from_file = tmp.path().join("a");
    let o = echoloop(&["simulate", "--seed", "3", "--config"], &[&cfg, Path::new("--out-dir"), &from_file]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));

    let mut args = vec!["simulate", "--seed", "3", "--alpha", "1.0"];
    args.extend(["--n", "20", "--m", "100", "--c", "4", "--links", "40", "--steps", "6"]);
    args.push("--out-dir");
    let from_flags = tmp.path().join("b");
    assert!(echoloop(&args, &[&from_flags]).status.success());
    assert_eq!(
        fs::read(from_file.join("metrics.csv")).unwrap(),
        fs::read(from_flags.join("metrics.csv")).unwrap()
    );

    // A flag overrides the file.
    let overridden = tmp.path().join("c");
    let o = echoloop(
        &["simulate", "--seed", "3", "--alpha", "4", "--config"],
        &[&cfg, Path::new("--out-dir"), &overridden],
    );
    assert!(o.status.success());
    assert_ne!(
        fs::read(from_file.join("metrics.csv")).unwrap(),
        fs::read(overridden.join("metrics.csv")).unwrap()
    );

    fs::write(&cfg, "n = 20\nbogus = 1\n").unwrap();
    let o = echoloop(&["simulate", "--seed", "3", "--config"], &[&cfg, Path::new("--out-dir"), &overridden]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn sweep_and_compare() {
    let tmp = tempfile::tempdir().unwrap();
    let sweep_dir = tmp.path().join("sweep");
    let mut args = vec!["sweep", "--seed", "1", "--axis", "alpha", "--values", "1,5"];
    args.extend(SMALL);
    args.push("--out-dir");
    let o = echoloop(&args, &[&sweep_dir]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(sweep_dir.join("sweep.csv").exists());

    let base = tmp.path().join("base");
    let dpp = tmp.path().join("dpp");
    let mut args = vec!["simulate", "--seed", "1,2"];
    args.extend(SMALL);
    args.push("--out-dir");
    assert!(echoloop(&args, &[&base]).status.success());
    let mut args = vec!["simulate", "--seed", "1,2", "--strategy", "dpp", "--theta", "0.501", "--candidates", "50"];
    args.extend(SMALL);
    args.push("--out-dir");
    assert!(echoloop(&args, &[&dpp]).status.success());

    let table = tmp.path().join("cmp.json");
    let o = echoloop(
        &["compare", "--candidate"],
        &[
            &dpp.join("summary.json"),
            Path::new("--baseline"),
            &base.join("summary.json"),
            Path::new("--out"),
            &table,
        ],
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("rce"));
    let rows: serde_json::Value = serde_json::from_slice(&fs::read(&table).unwrap()).unwrap();
    assert_eq!(rows.as_array().unwrap().len(), 5);
}

#[test]
fn synth_writes_dataset_files() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let o = echoloop(
        &["synth", "--n", "15", "--m", "60", "--c", "3", "--links", "30", "--seed", "4", "--out-dir"],
        &[&data],
    );
    assert!(o.status.success());
    for f in ["items.csv", "trust.csv", "initial_states.csv"] {
        assert!(data.join(f).exists());
    }
}

#[test]
fn verify_theory_passes() {
    let o = echoloop(&["verify-theory", "--seed", "2"], &[]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stdout));
    assert!(!String::from_utf8_lossy(&o.stdout).contains("FAIL"));
}
