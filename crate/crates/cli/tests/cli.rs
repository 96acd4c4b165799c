//! End-to-end tests driving the binary.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_gcb-audit"))
}

struct Files {
    logits: PathBuf,
    candidates: PathBuf,
    queries: PathBuf,
}

fn synth_bundle(dir: &Path) -> Files {
    let files = Files {
        logits: dir.join("logits.gcbl"),
        candidates: dir.join("candidates.jsonl"),
        queries: dir.join("queries.jsonl"),
    };
    let out = bin()
        .args(["synth", "--num-queries", "200", "--num-candidates", "100", "--num-buckets", "10"])
        .arg("--logits")
        .arg(&files.logits)
        .arg("--candidates")
        .arg(&files.candidates)
        .arg("--queries")
        .arg(&files.queries)
        .output()
        .unwrap();
    assert!(out.status.success(), "synth failed: {out:?}");
    files
}

fn bundle_args(cmd: &mut Command, files: &Files) {
    cmd.arg("--logits")
        .arg(&files.logits)
        .arg("--candidates")
        .arg(&files.candidates)
        .arg("--queries")
        .arg(&files.queries);
}

fn stderr_error_kind(out: &Output) -> String {
    let v: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    v["error"]["kind"].as_str().unwrap().to_string()
}

#[test]
fn synth_validate_audit_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let files = synth_bundle(dir.path());

    let mut cmd = bin();
    cmd.arg("validate");
    bundle_args(&mut cmd, &files);
    let out = cmd.output().unwrap();
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["valid"], true);
    assert_eq!(v["shape"]["num_queries"], 200);

    let mut cmd = bin();
    cmd.args(["gcb", "--bootstrap", "500", "--seed", "3"]);
    bundle_args(&mut cmd, &files);
    let out = cmd.output().unwrap();
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(v["delta"]["r_at_k"]["1"].as_f64().unwrap() > 0.0);
    assert!(v["bootstrap"]["delta_r1"]["p_value"].as_f64().unwrap() <= 0.05);
}

#[test]
fn seeded_commands_are_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let files = synth_bundle(dir.path());
    for args in [
        vec!["gcb", "--bootstrap", "200", "--seed", "9"],
        vec!["gamma-sweep", "--gammas", "0,0.7,1.4", "--format", "csv"],
        vec!["attenuate", "--alphas", "1,0.5,0", "--seed", "5", "--format", "csv"],
        vec!["perturb", "--kind", "random-within-story", "--p", "0.5,1", "--seed", "2"],
        vec!["pool-sweep", "--sizes", "100", "--seed", "4"],
        vec!["bootstrap", "--metric", "mrr", "--resamples", "300", "--seed", "8"],
    ] {
        let mut first = bin();
        first.args(&args);
        bundle_args(&mut first, &files);
        let a = first.output().unwrap();
        assert!(a.status.success(), "{args:?}: {}", String::from_utf8_lossy(&a.stderr));

        let mut second = bin();
        second.args(&args);
        bundle_args(&mut second, &files);
        let b = second.output().unwrap();
        assert_eq!(a.stdout, b.stdout, "{args:?} diverged across runs");
    }

    // Regenerating the bundle reproduces identical files.
    let second_dir = tempfile::tempdir().unwrap();
    let again = synth_bundle(second_dir.path());
    assert_eq!(
        std::fs::read(&files.logits).unwrap(),
        std::fs::read(&again.logits).unwrap()
    );
    assert_eq!(
        std::fs::read(&files.queries).unwrap(),
        std::fs::read(&again.queries).unwrap()
    );
}

#[test]
fn truncated_logit_file_is_a_structured_error() {
    let dir = tempfile::tempdir().unwrap();
    let files = synth_bundle(dir.path());
    let bytes = std::fs::read(&files.logits).unwrap();
    std::fs::write(&files.logits, &bytes[..bytes.len() - 7]).unwrap();

    let mut cmd = bin();
    cmd.arg("metrics");
    bundle_args(&mut cmd, &files);
    let out = cmd.output().unwrap();
    assert!(!out.status.success());
    assert_eq!(stderr_error_kind(&out), "truncated_file");
    let v: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    let message = v["error"]["message"].as_str().unwrap();
    assert!(message.contains(&format!("{}", bytes.len())), "message: {message}");
    assert!(message.contains(&format!("{}", bytes.len() - 7)), "message: {message}");
}

#[test]
fn csv_is_rejected_for_non_tabular_reports() {
    let dir = tempfile::tempdir().unwrap();
    let files = synth_bundle(dir.path());
    let mut cmd = bin();
    cmd.args(["gcb", "--format", "csv"]);
    bundle_args(&mut cmd, &files);
    let out = cmd.output().unwrap();
    assert!(!out.status.success());
    assert_eq!(stderr_error_kind(&out), "unsupported_format");
}

#[test]
fn unknown_format_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let files = synth_bundle(dir.path());
    let mut cmd = bin();
    cmd.args(["metrics", "--format", "yaml"]);
    bundle_args(&mut cmd, &files);
    let out = cmd.output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn gamma_sweep_csv_has_header_and_one_row_per_gamma() {
    let dir = tempfile::tempdir().unwrap();
    let files = synth_bundle(dir.path());
    let mut cmd = bin();
    cmd.args(["gamma-sweep", "--gammas", "0,0.4,0.7,1.4", "--format", "csv"]);
    bundle_args(&mut cmd, &files);
    let out = cmd.output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().count(), 5);
    assert!(text.lines().next().unwrap().starts_with("gamma,"));
}

#[test]
fn manifest_with_out_of_range_bucket_fails_validation() {
    let dir = tempfile::tempdir().unwrap();
    let files = synth_bundle(dir.path());
    // Rewrite one candidate line to point at a bucket with no other member,
    // leaving a gap in the bucket ids.
    let text = std::fs::read_to_string(&files.candidates).unwrap();
    let patched: Vec<String> = text
        .lines()
        .enumerate()
        .map(|(i, line)| {
            if i == 0 {
                line.replace("\"bucket\":0", "\"bucket\":99")
            } else {
                line.to_string()
            }
        })
        .collect();
    std::fs::write(&files.candidates, patched.join("\n") + "\n").unwrap();

    let mut cmd = bin();
    cmd.arg("validate");
    bundle_args(&mut cmd, &files);
    let out = cmd.output().unwrap();
    assert!(!out.status.success());
    assert_eq!(stderr_error_kind(&out), "empty_bucket");
}

#[test]
fn emit_queries_requires_a_single_probability() {
    let dir = tempfile::tempdir().unwrap();
    let files = synth_bundle(dir.path());
    let out_path = dir.path().join("perturbed.jsonl");
    let mut cmd = bin();
    cmd.args(["perturb", "--kind", "neighbour-once", "--p", "0.5,1.0"]);
    cmd.arg("--emit-queries").arg(&out_path);
    bundle_args(&mut cmd, &files);
    let out = cmd.output().unwrap();
    assert!(!out.status.success());
    assert_eq!(stderr_error_kind(&out), "invalid_config");

    let mut cmd = bin();
    cmd.args(["perturb", "--kind", "neighbour-once", "--p", "1.0"]);
    cmd.arg("--emit-queries").arg(&out_path);
    bundle_args(&mut cmd, &files);
    let out = cmd.output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(out_path.exists());
}

#[test]
fn emitted_corrected_logits_load_back() {
    let dir = tempfile::tempdir().unwrap();
    let files = synth_bundle(dir.path());
    let corrected = dir.path().join("corrected.gcbl");
    let mut cmd = bin();
    cmd.arg("gcb").arg("--emit-logits").arg(&corrected);
    bundle_args(&mut cmd, &files);
    let out = cmd.output().unwrap();
    assert!(out.status.success());

    // The corrected matrix is a valid logit file for the same manifests.
    let mut cmd = bin();
    cmd.arg("metrics");
    cmd.arg("--logits").arg(&corrected);
    cmd.arg("--candidates").arg(&files.candidates);
    cmd.arg("--queries").arg(&files.queries);
    let out = cmd.output().unwrap();
    assert!(out.status.success());
}
