//! The `mirage-sim` binary: exit codes, stdout JSON and written files.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_mirage-sim"))
}

fn write_config(dir: &Path) -> PathBuf {
    let path = dir.join("small.toml");
    std::fs::write(
        &path,
        r#"
rng_seed = 3
num_positions = 3
output_dir = "unused"

[environment]
width = 20.0
height = 15.0
reflectors = [{ start = [5.0, 4.0], end = [9.0, 4.0], gamma = 0.5 }]
"#,
    )
    .unwrap();
    path
}

fn json(out: &[u8]) -> serde_json::Value {
    let text = String::from_utf8_lossy(out);
    let line = text.lines().last().expect("one JSON line");
    serde_json::from_str(line).unwrap()
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn run_writes_outputs_and_reports_json() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let outdir = dir.path().join("out");
    let out = bin()
        .arg("run")
        .arg(&cfg)
        .arg("--out")
        .arg(&outdir)
        .args(["--positions", "2", "--seed", "11"])
        .output()
        .unwrap();
    ok(&out);
    let v = json(&out.stdout);
    assert_eq!(v["status"], "ok");
    assert_eq!(v["trials"], 2);
    assert_eq!(v["policies"].as_array().unwrap().len(), 4);
    for name in ["trials.csv", "summary.csv", "scenario.resolved"] {
        assert!(outdir.join(name).exists(), "{name}");
    }
    let resolved = std::fs::read_to_string(outdir.join("scenario.resolved")).unwrap();
    assert!(resolved.contains("rng_seed = 11"));
}

#[test]
fn profile_reports_every_ap_and_writes_profiles() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let outdir = dir.path().join("prof");
    let out = bin()
        .arg("profile")
        .arg(&cfg)
        .arg("--out")
        .arg(&outdir)
        .args(["--position", "6,5", "--policy", "mirage"])
        .output()
        .unwrap();
    ok(&out);
    let v = json(&out.stdout);
    assert_eq!(v["policy"], "mirage");
    let aps = v["aps"].as_array().unwrap();
    assert_eq!(aps.len(), 4);
    assert_eq!(aps.iter().filter(|a| a["serving"] == true).count(), 1);
    for a in aps {
        if let Some(p) = a["profile"].as_str() {
            assert!(Path::new(p).exists(), "{p}");
        }
    }
}

#[test]
fn precoder_csv_to_stdout() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let out = bin()
        .arg("precoder")
        .arg(&cfg)
        .args(["--position", "6,5", "--policy", "nulling"])
        .output()
        .unwrap();
    ok(&out);
    let mut rdr = csv::Reader::from_reader(out.stdout.as_slice());
    assert_eq!(rdr.records().count(), 52 * 4);
}

#[test]
fn errors_are_one_json_line_on_stderr() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let out = bin()
        .arg("profile")
        .arg(&cfg)
        .args(["--position", "50,50", "--policy", "none"])
        .output()
        .unwrap();
    assert!(!out.status.success());
    let v = json(&out.stderr);
    assert_eq!(v["status"], "error");
    assert_eq!(v["kind"], "geometry");

    let out = bin().arg("run").arg(dir.path().join("missing.toml")).output().unwrap();
    assert!(!out.status.success());
    assert_eq!(json(&out.stderr)["kind"], "io");
}
