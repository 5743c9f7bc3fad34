mod common;

use std::fs;
use std::path::Path;
use std::process::Command;

use localcontrol::Manifest;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_localcontrol"))
}

fn write_config(dir: &Path) -> std::path::PathBuf {
    let cfg = common::synthetic_config(dir);
    let path = dir.join("config.json");
    fs::write(&path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    path
}

#[test]
fn run_all_then_single_stages() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path());
    let out = tmp.path().join("bundle");

    let status = bin()
        .args(["run-all", "--threads", "2", "--config"])
        .arg(&config)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
    let stdout = String::from_utf8_lossy(&status.stdout);
    assert!(stdout.contains("confirm: D ="), "{stdout}");
    let m = Manifest::load(&out).unwrap();
    assert!(m.complete);
    assert!(out.join("timings.json").exists());

    // Re-running explore alone with a different grid rewrites only its files.
    let status = bin()
        .args(["explore", "--grid", "1,3,6", "--config"])
        .arg(&config)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
    let text = fs::read_to_string(out.join("explore.csv")).unwrap();
    assert_eq!(text.lines().count(), 4);
}

#[test]
fn overrides_reach_the_config() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path());
    let output = bin()
        .args(["show-config", "--k", "7", "--seed", "42", "--method", "ward.D2", "--config"])
        .arg(&config)
        .output()
        .unwrap();
    assert!(output.status.success());
    let v: serde_json::Value = serde_json::from_slice(&output.stdout).unwrap();
    assert_eq!(v["k"], 7);
    assert_eq!(v["method"], "ward.D2");
    assert_eq!(v["confirm"]["seed"], 42);
    assert_eq!(v["forest"]["seed"], 42);
}

#[test]
fn errors_exit_nonzero() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path());

    let status = bin().args(["aggregate", "--method", "single", "--config"]).arg(&config).status().unwrap();
    assert!(!status.success());

    let out = tmp.path().join("fresh");
    let output = bin().args(["confirm", "--config"]).arg(&config).arg("--out").arg(&out).output().unwrap();
    assert!(!output.status.success());
    assert!(String::from_utf8_lossy(&output.stderr).contains("clusters.csv"));
    assert!(!Manifest::load(&out).unwrap().complete);

    let empty = tmp.path().join("empty.csv");
    fs::write(&empty, "uid,y,e,c1,c2,c3,r,z\n").unwrap();
    let status = bin()
        .args(["run-all", "--config"])
        .arg(&config)
        .arg("--input")
        .arg(&empty)
        .arg("--out")
        .arg(tmp.path().join("e"))
        .status()
        .unwrap();
    assert!(!status.success());
}
