use std::path::Path;
use std::process::{Command, Output};

fn etmarl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_etmarl")).args(args).output().unwrap()
}

fn json_lines(bytes: &[u8]) -> Vec<serde_json::Value> {
    String::from_utf8_lossy(bytes)
        .lines()
        .map(|l| serde_json::from_str(l).unwrap_or_else(|e| panic!("{l}: {e}")))
        .collect()
}

fn desk_config(dir: &Path) -> String {
    let out = etmarl(&["profile", "desk"]);
    assert!(out.status.success());
    let path = dir.join("run.toml");
    std::fs::write(&path, &out.stdout).unwrap();
    path.to_string_lossy().into_owned()
}

#[test]
fn stages_run_from_a_profile_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = desk_config(dir.path());
    let small = ["--config", &cfg, "--arena", "3", "--games", "200"];

    let out = etmarl(&[&["train"], &small[..]].concat());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let lines = json_lines(&out.stdout);
    assert_eq!(lines[0]["meta"]["arena_width"], 3);

    let out = etmarl(&[&["simulate", "--trigger", "full-comm"], &small[..]].concat());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(json_lines(&out.stdout)[0]["summary"]["msg_rate"], 2.0);

    let out = etmarl(&[&["simulate", "--alpha", "0.4"], &small[..]].concat());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let out = etmarl(&[&["report"], &small[..]].concat());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("results/report.md").is_file());
}

#[test]
fn failures_exit_nonzero_with_a_json_error() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "alphas = [0.1]\nnot_a_field = 1\n").unwrap();
    let out = etmarl(&["train", "--config", bad.to_str().unwrap()]);
    assert!(!out.status.success());
    let err = &json_lines(&out.stderr)[0];
    assert!(err["error"].is_string() && err["message"].is_string());

    let cfg = desk_config(dir.path());
    let out = etmarl(&["report", "--config", &cfg]);
    assert!(!out.status.success());
    assert_eq!(json_lines(&out.stderr)[0]["error"], "missing_artifact");

    let out = etmarl(&["simulate", "--config", &cfg, "--trigger", "sometimes"]);
    assert!(!out.status.success());
}
