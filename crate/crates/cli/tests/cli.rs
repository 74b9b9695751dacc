//! End-to-end tests that drive the compiled `edgetrain` binary the way a
//! user would: chained subcommands over artifact directories, determinism
//! of the written bytes, and the failure contract (exit codes plus a
//! single-line JSON error on stderr).

use std::path::Path;
use std::process::{Command, Output};

fn edgetrain(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_edgetrain"))
        .args(args)
        .output()
        .expect("binary should run")
}

fn ok(args: &[&str]) -> Output {
    let out = edgetrain(args);
    assert!(
        out.status.success(),
        "edgetrain {args:?} failed:\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

/// Stderr of a failing invocation must be exactly one line of JSON with
/// `error` and `code` fields, and the exit code must match `code`.
fn expect_failure(args: &[&str], expect_code: i32) -> serde_json::Value {
    let out = edgetrain(args);
    assert_eq!(out.status.code(), Some(expect_code), "edgetrain {args:?}");
    let stderr = String::from_utf8(out.stderr).unwrap();
    let mut lines = stderr.lines().filter(|l| !l.is_empty());
    let line = lines.next().expect("an error line");
    assert!(lines.next().is_none(), "more than one stderr line: {stderr}");
    let v: serde_json::Value = serde_json::from_str(line).expect("machine-parsable error");
    assert_eq!(v["code"].as_i64(), Some(expect_code as i64));
    assert!(v["error"].is_string());
    v
}

fn path(dir: &Path, name: &str) -> String {
    dir.join(name).to_string_lossy().into_owned()
}

#[test]
fn full_pipeline_produces_all_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let out = path(dir, "");

    ok(&["build", "--model", "cct-tiny", "--out", &out]);
    ok(&["diff", "--graph", &path(dir, "graph.json"), "--strategy", "lora-2", "--out", &out]);
    ok(&["plan", "--graph", &path(dir, "training.json"), "--out", &out]);
    ok(&["run", "--graph", &path(dir, "training.json"), "--steps", "3", "--out", &out]);
    ok(&[
        "estimate",
        "--graph", &path(dir, "training.json"),
        "--plan", &path(dir, "plan.json"),
        "--out", &out,
    ]);
    ok(&[
        "emit",
        "--graph", &path(dir, "training.json"),
        "--plan", &path(dir, "plan.json"),
        "--out", &out,
    ]);

    for name in [
        "graph.json",
        "graph.blob",
        "training.json",
        "plan.json",
        "run.json",
        "estimate.json",
        "emit.json",
        "csrc/Makefile",
        "csrc/schedule.c",
        "csrc/fixture.bin",
    ] {
        assert!(dir.join(name).exists(), "missing {name}");
    }

    let run: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("run.json")).unwrap()).unwrap();
    assert_eq!(run["payload"]["losses"].as_array().unwrap().len(), 3);

    let est: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("estimate.json")).unwrap()).unwrap();
    assert!(est["payload"]["speedup"].as_f64().unwrap() > 0.0);
    assert_eq!(est["kind"].as_str(), Some("estimate"));
}

#[test]
fn identical_invocations_write_identical_bytes() {
    let (t1, t2) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for dir in [t1.path(), t2.path()] {
        let out = path(dir, "");
        ok(&["build", "--model", "cct-tiny", "--out", &out]);
        ok(&["diff", "--graph", &path(dir, "graph.json"), "--strategy", "ft-2", "--out", &out]);
        ok(&["plan", "--graph", &path(dir, "training.json"), "--out", &out]);
    }
    for name in ["graph.json", "graph.blob", "training.json", "plan.json"] {
        let a = std::fs::read(t1.path().join(name)).unwrap();
        let b = std::fs::read(t2.path().join(name)).unwrap();
        assert_eq!(a, b, "{name} differs between identical runs");
    }
}

#[test]
fn mixed_stage_artifacts_are_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let out = path(dir, "");
    ok(&["build", "--model", "cct-tiny", "--out", &out]);
    ok(&["diff", "--graph", &path(dir, "graph.json"), "--strategy", "lora-2", "--out", &out]);
    ok(&["plan", "--graph", &path(dir, "training.json"), "--out", &out]);

    // A second training artifact from a different strategy: its hash no
    // longer matches the plan's recorded parent.
    let other = tempfile::tempdir().unwrap();
    let oout = path(other.path(), "");
    ok(&["build", "--model", "cct-tiny", "--out", &oout]);
    ok(&["diff", "--graph", &path(other.path(), "graph.json"), "--strategy", "ft-1", "--out", &oout]);

    let err = expect_failure(
        &[
            "estimate",
            "--graph", &path(other.path(), "training.json"),
            "--plan", &path(dir, "plan.json"),
            "--out", &oout,
        ],
        1,
    );
    assert!(err["error"].as_str().unwrap().contains("provenance"));
}

#[test]
fn tampered_artifacts_fail_their_integrity_check() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let out = path(dir, "");
    ok(&["build", "--model", "cct-tiny", "--out", &out]);
    let gpath = dir.join("graph.json");
    let text = std::fs::read_to_string(&gpath).unwrap();
    std::fs::write(&gpath, text.replace("\"blocks\": 2", "\"blocks\": 3")).unwrap();
    let err = expect_failure(
        &["diff", "--graph", &path(dir, "graph.json"), "--strategy", "lp", "--out", &out],
        1,
    );
    assert!(err["error"].as_str().unwrap().contains("integrity"));
}

#[test]
fn bad_arguments_exit_one_with_json_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let out = path(tmp.path(), "");
    expect_failure(&["build", "--model", "nope", "--out", &out], 1);
    // Missing required flags (a clap-level failure) obeys the same contract.
    expect_failure(&["plan"], 1);
    expect_failure(&["build", "--model", "cct", "--out", &out, "--seed", "x"], 1);
}

#[test]
fn report_writes_csvs_over_every_preset() {
    let tmp = tempfile::tempdir().unwrap();
    let out = path(tmp.path(), "");
    ok(&["report", "--tiny", "--out", &out]);
    for name in ["sizes.csv", "latency.csv", "memory.csv", "report.json"] {
        assert!(tmp.path().join(name).exists(), "missing {name}");
    }
    let sizes = std::fs::read_to_string(tmp.path().join("sizes.csv")).unwrap();
    assert_eq!(sizes.lines().count(), 7, "header plus six presets");
    for preset in ["lp", "ft1", "ft2", "lora1", "lora2", "full"] {
        assert!(sizes.contains(&format!("\n{preset},")) || sizes.contains(&format!("{preset},")));
    }
    let latency = std::fs::read_to_string(tmp.path().join("latency.csv")).unwrap();
    assert!(!latency.contains("NaN") && !latency.contains("inf"));
}

#[test]
fn emitted_tree_builds_with_its_own_makefile() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let out = path(dir, "");
    ok(&["build", "--model", "cct-tiny", "--out", &out]);
    ok(&["diff", "--graph", &path(dir, "graph.json"), "--strategy", "lp", "--out", &out]);
    ok(&["plan", "--graph", &path(dir, "training.json"), "--out", &out]);
    ok(&[
        "emit",
        "--graph", &path(dir, "training.json"),
        "--plan", &path(dir, "plan.json"),
        "--out", &out,
    ]);
    let csrc = dir.join("csrc");
    let make = Command::new("make")
        .arg("step")
        .current_dir(&csrc)
        .output()
        .expect("make should run");
    assert!(
        make.status.success(),
        "make failed: {}",
        String::from_utf8_lossy(&make.stderr)
    );
    let step = Command::new("./step")
        .arg("fixture.bin")
        .current_dir(&csrc)
        .output()
        .unwrap();
    assert!(step.status.success());
    let v: serde_json::Value = serde_json::from_slice(&step.stdout).unwrap();
    assert!(v["loss"].as_f64().unwrap().is_finite());
}
