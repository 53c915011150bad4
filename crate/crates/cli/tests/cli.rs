use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn fixture(rel: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../fixtures")
        .join(rel)
        .to_string_lossy()
        .into_owned()
}

fn crsim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_crsim"))
        .args(args)
        .output()
        .expect("run crsim")
}

fn ok_json(out: &Output) -> Value {
    assert!(
        out.status.success(),
        "status {} stderr {}",
        out.status,
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

fn error_summary(out: &Output) -> Value {
    let stderr = String::from_utf8_lossy(&out.stderr);
    let last = stderr
        .lines()
        .rev()
        .find(|l| l.starts_with('{'))
        .expect("JSON summary on stderr");
    serde_json::from_str(last).unwrap()
}

fn header_of(path: &Path) -> Value {
    let text = std::fs::read_to_string(path).unwrap();
    let first: Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
    first["_header"].clone()
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn replay_fixture(dir: &Path) -> PathBuf {
    let out = dir.join("replay.jsonl");
    let o = crsim(&[
        "replay",
        "--corpus",
        &fixture("replay/corpus.jsonl"),
        "--user-policy",
        &fixture("replay/user-policy.json"),
        "--seed",
        "7",
        "--out",
        path_str(&out),
    ]);
    ok_json(&o);
    out
}

#[test]
fn missing_input_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = crsim(&[
        "preprocess",
        "--corpus",
        "/nonexistent/corpus.jsonl",
        "--catalog",
        &fixture("catalog.jsonl"),
        "--out",
        path_str(&tmp.path().join("o.jsonl")),
    ]);
    assert_eq!(out.status.code(), Some(2));
    let s = error_summary(&out);
    assert_eq!(s["error"], "usage");
    assert_eq!(s["exit_code"], 2);
    assert_eq!(s["command"], "preprocess");
}

#[test]
fn unknown_flag_and_missing_seed_exit_two() {
    let out = crsim(&["eval", "--bogus"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_summary(&out)["error"], "usage");

    let out = crsim(&[
        "simulate",
        "--personas",
        &fixture("replay/corpus.jsonl"),
        "--user-policy",
        &fixture("policies/rule-user.json"),
        "--rec-policy",
        &fixture("policies/rule-recommender.json"),
        "--out",
        "/tmp/never-written.jsonl",
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn help_exits_zero() {
    let out = crsim(&["--help"]);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("File formats"));
}

#[test]
fn malformed_policy_is_a_data_error() {
    let tmp = tempfile::tempdir().unwrap();
    let policy = tmp.path().join("bad.json");
    std::fs::write(&policy, r#"{"kind": "teleport"}"#).unwrap();
    let out = crsim(&[
        "replay",
        "--corpus",
        &fixture("replay/corpus.jsonl"),
        "--user-policy",
        path_str(&policy),
        "--seed",
        "1",
        "--out",
        path_str(&tmp.path().join("r.jsonl")),
    ]);
    assert_eq!(out.status.code(), Some(1));
    let s = error_summary(&out);
    assert_eq!(s["error"], "data");
    assert_eq!(s["command"], "replay");
}

#[test]
fn preprocess_reports_and_writes_headers() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("kept.jsonl");
    let report = tmp.path().join("report.json");
    let o = crsim(&[
        "preprocess",
        "--corpus",
        &fixture("preprocess/corpus.jsonl"),
        "--catalog",
        &fixture("catalog.jsonl"),
        "--out",
        path_str(&out),
        "--report",
        path_str(&report),
    ]);
    let stdout = ok_json(&o);
    assert_eq!(stdout["kept"], 18);
    let h = header_of(&out);
    assert_eq!(h["tool"], "crsim");
    assert_eq!(h["command"], "preprocess");
    assert!(h["config_hash"].as_str().is_some_and(|s| !s.is_empty()));
    let saved: Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(saved["dropped_off_catalog"], 1);
    let lines = std::fs::read_to_string(&out).unwrap().lines().count();
    assert_eq!(lines, 19);
}

#[test]
fn export_views_writes_one_line_per_dialogue() {
    let tmp = tempfile::tempdir().unwrap();
    let (u, r) = (tmp.path().join("u.jsonl"), tmp.path().join("r.jsonl"));
    let o = crsim(&[
        "export-views",
        "--corpus",
        &fixture("replay/corpus.jsonl"),
        "--out-user",
        path_str(&u),
        "--out-rec",
        path_str(&r),
        "--jobs",
        "3",
    ]);
    assert_eq!(ok_json(&o)["dialogues"], 10);
    for p in [&u, &r] {
        assert_eq!(header_of(p)["command"], "export-views");
        assert_eq!(std::fs::read_to_string(p).unwrap().lines().count(), 11);
    }
}

#[test]
fn replay_then_eval_partitions() {
    let tmp = tempfile::tempdir().unwrap();
    let records = replay_fixture(tmp.path());
    assert_eq!(header_of(&records)["seed"], 7);
    let report = ok_json(&crsim(&["eval", "--records", path_str(&records)]));
    let n = report["n_dialogues"].as_u64().unwrap();
    let parts: u64 = ["n_sr", "n_et", "n_fr"]
        .iter()
        .map(|k| report[k].as_u64().unwrap())
        .sum();
    assert_eq!(parts, n);
    assert_eq!(n, 10);

    let table = crsim(&["eval", "--records", path_str(&records), "--table"]);
    assert!(table.status.success());
    let text = String::from_utf8_lossy(&table.stdout);
    assert!(text.contains("0.4000"), "{text}");
}

#[test]
fn committed_replay_fixture_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let fresh = std::fs::read_to_string(replay_fixture(tmp.path())).unwrap();
    let committed = std::fs::read_to_string(fixture("replay.jsonl")).unwrap();
    let body = |s: &str| s.lines().skip(1).map(str::to_string).collect::<Vec<_>>();
    assert_eq!(body(&fresh), body(&committed));
}

#[test]
fn rec_at_gt_skips_dialogues_without_a_ground_truth_recommendation() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("gt.jsonl");
    let contexts = tmp.path().join("ctx.jsonl");
    let summary = ok_json(&crsim(&[
        "replay",
        "--mode",
        "rec-at-gt",
        "--corpus",
        &fixture("replay/corpus.jsonl"),
        "--rec-policy",
        &fixture("policies/rule-recommender.json"),
        "--seed",
        "3",
        "--out",
        path_str(&out),
        "--contexts-out",
        path_str(&contexts),
    ]));
    assert_eq!(summary["skipped"].as_array().unwrap().len(), 2);
    assert_eq!(summary["oracle_leaks"], 0);
    assert_eq!(std::fs::read_to_string(&out).unwrap().lines().count(), 9);
    assert!(std::fs::read_to_string(&contexts).unwrap().lines().count() > 1);
}

#[test]
fn replay_requires_the_matching_policy() {
    let tmp = tempfile::tempdir().unwrap();
    let out = crsim(&[
        "replay",
        "--mode",
        "rec-at-gt",
        "--corpus",
        &fixture("replay/corpus.jsonl"),
        "--seed",
        "3",
        "--out",
        path_str(&tmp.path().join("x.jsonl")),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn grad_check_passes_and_fails_on_tolerance() {
    let report = ok_json(&crsim(&["grad-check", "--coords", "32"]));
    assert_eq!(report["passed"], true);
    assert!(report["max_rel_error"].as_f64().unwrap() < 1e-4);
    assert_eq!(report["_header"]["command"], "grad-check");

    let out = crsim(&["grad-check", "--coords", "32", "--tolerance", "0"]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(crsim(&["grad-check", "--eps", "0"]).status.code(), Some(2));
}

#[test]
fn train_toy_small_then_sample() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("toy");
    let summary = ok_json(&crsim(&[
        "train-toy",
        "--n-dialogues",
        "40",
        "--epochs",
        "1",
        "--audit-prompts",
        "10",
        "--out-dir",
        path_str(&dir),
    ]));
    assert_eq!(summary["assignment"], "matched");
    assert_eq!(summary["audit"].as_array().unwrap().len(), 2);
    for f in [
        "user.ckpt.json",
        "recommender.ckpt.json",
        "train_log.json",
        "audit.json",
    ] {
        assert!(dir.join(f).is_file(), "{f} missing");
    }
    let out = crsim(&[
        "sample",
        "--checkpoint",
        path_str(&dir.join("user.ckpt.json")),
        "--n",
        "3",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(String::from_utf8_lossy(&out.stdout).lines().count(), 3);

    let bad = crsim(&["train-toy", "--batch-size", "0", "--out-dir", path_str(&dir)]);
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn serve_rejects_bad_config() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("server.json");
    std::fs::write(&cfg, r#"{"bind": "127.0.0.1:0", "no_such_field": 1}"#).unwrap();
    let out = crsim(&["serve", "--config", path_str(&cfg)]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(error_summary(&out)["command"], "serve");

    let out = crsim(&["serve", "--config", "/nonexistent/server.json"]);
    assert_eq!(out.status.code(), Some(2));
}
