//! The `qloc` binary: exit codes, determinism and report shapes.

use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn qloc(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qloc"))
        .args(args)
        .current_dir(cwd)
        .env("SOURCE_DATE_EPOCH", "1700000000")
        .output()
        .unwrap()
}

fn ok(args: &[&str], cwd: &Path) -> Output {
    let out = qloc(args, cwd);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

/// Small data directory plus a short training config.
fn workspace() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("spec.json"),
        r#"{"train_interviews": 3, "dev_interviews": 1, "test_interviews": 2, "segments_per_interview": 4}"#,
    )
    .unwrap();
    std::fs::write(dir.path().join("c.cfg"), "epochs = 2\nlearning_rate = 0.003\n").unwrap();
    ok(&["prepare", "--out", "data", "--config", "spec.json", "--seed", "1"], dir.path());
    dir
}

#[test]
fn usage_errors_exit_with_2() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(qloc(&["eval", "--no-such-flag"], dir.path()).status.code(), Some(2));
    assert_eq!(qloc(&["frobnicate"], dir.path()).status.code(), Some(2));
    assert_eq!(qloc(&["eval", "--data", "d", "--variant", "other"], dir.path()).status.code(), Some(2));
}

#[test]
fn operational_failures_exit_with_1() {
    let dir = tempfile::tempdir().unwrap();
    let out = qloc(&["eval", "--data", "missing", "--variant", "no-train"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
}

#[test]
fn training_twice_gives_identical_checkpoints() {
    let dir = workspace();
    let p = dir.path();
    for run in ["a", "b"] {
        ok(&["train", "--data", "data", "--out", run, "--config", "c.cfg", "--seed", "7"], p);
    }
    let read = |f: &str| std::fs::read(p.join(f)).unwrap();
    assert_eq!(read("a/head.bin"), read("b/head.bin"));
    assert_eq!(read("a/best.bin"), read("b/best.bin"));
    let log: Vec<Value> = String::from_utf8(read("a/train_log.jsonl"))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(log.len(), 2);
    for key in ["epoch", "mean_loss", "lr", "dev_r1", "dev_r5", "dev_r10", "dev_ravg", "wall_s"] {
        assert!(log[0].get(key).is_some(), "missing {key}");
    }

    ok(&["train", "--data", "data", "--out", "c", "--config", "c.cfg", "--seed", "8"], p);
    assert_ne!(read("a/head.bin"), read("c/head.bin"));
}

#[test]
fn eval_emits_report_json() {
    let dir = workspace();
    let p = dir.path();
    let out = ok(&["eval", "--split", "test", "--variant", "no-train", "--data", "data"], p);
    let report: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["per_interview"].as_array().unwrap().len(), 2);
    for key in ["r1", "r5", "r10", "ravg"] {
        assert!(report["mean"][key].is_f64());
    }
    assert_eq!(report["excluded_questions"], 0);

    ok(&["train", "--data", "data", "--out", "run", "--config", "c.cfg"], p);
    ok(
        &["eval", "--data", "data", "--checkpoint", "run/head.bin", "--w", "7", "--out", "r.json"],
        p,
    );
    let report: Value = serde_json::from_str(&std::fs::read_to_string(p.join("r.json")).unwrap()).unwrap();
    assert!(report["mean"]["r1"].as_f64().unwrap() >= 0.0);
    assert_eq!(
        qloc(&["eval", "--data", "data", "--variant", "indent"], p).status.code(),
        Some(1),
        "trained variant without checkpoint"
    );
}

#[test]
fn index_and_query() {
    let dir = workspace();
    let p = dir.path();
    ok(&["train", "--data", "data", "--out", "run", "--config", "c.cfg"], p);
    let built = ok(&["index", "--data", "data", "--checkpoint", "run/head.bin", "--out", "idx", "--w", "3"], p);
    let files = String::from_utf8(built.stdout).unwrap();
    assert_eq!(files.lines().count(), 2);
    let first = files.lines().next().unwrap().to_owned();
    let bytes = std::fs::read(p.join(&first)).unwrap();
    ok(&["index", "--data", "data", "--checkpoint", "run/head.bin", "--out", "idx", "--w", "3"], p);
    assert_eq!(std::fs::read(p.join(&first)).unwrap(), bytes, "rebuild is byte-identical");

    let out = ok(
        &["query", "--index", "idx", "--data", "data", "--interview", "test-01", "--text", "synthetic question 004", "-k", "5"],
        p,
    );
    let resp: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(resp["results"].as_array().unwrap().len(), 5);
    assert_eq!(resp["clamped"], false);

    let out = qloc(
        &["query", "--index", "idx", "--data", "data", "--interview", "test-01", "--question-id", "nope"],
        p,
    );
    assert_eq!(out.status.code(), Some(1));
    let out = qloc(&["query", "--index", "idx", "--data", "data", "--interview", "test-01"], p);
    assert_eq!(out.status.code(), Some(2), "neither text nor question id");
}

#[test]
fn bench_runs_selected_criteria() {
    let dir = workspace();
    let p = dir.path();
    let out = ok(
        &["bench", "--fixtures", "data", "--work", "w", "--criteria", "2,7", "--out", "report.json"],
        p,
    );
    let lines = String::from_utf8(out.stdout).unwrap();
    assert_eq!(lines.lines().count(), 2);
    assert!(lines.lines().all(|l| l.contains("PASS")));
    let report: Value = serde_json::from_str(&std::fs::read_to_string(p.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["passed"], true);

    let out = qloc(&["bench", "--fixtures", "absent", "--work", "w"], p);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("setup error"));
}
