use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

fn run(data_dir: &Path, args: &[&str], stdin: &str) -> Output {
    let mut child = Command::new(env!("CARGO_BIN_EXE_cogtrain"))
        .arg("--data-dir")
        .arg(data_dir)
        .args(args)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    child.stdin.take().unwrap().write_all(stdin.as_bytes()).unwrap();
    child.wait_with_output().unwrap()
}

fn script(name: &str) -> String {
    format!("script:{}", fixtures().join("scripts").join(name).display())
}

#[test]
fn unknown_group_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), &["play", "nonexistent", "--provider", &script("guessing-short.json")], "");
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn exhausted_script_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let words = fixtures().join("words.txt");
    let out = run(
        dir.path(),
        &[
            "play",
            "guessing-word",
            "--provider",
            &script("guessing-short.json"),
            "--words",
            words.to_str().unwrap(),
            "--category",
            "vehicles",
        ],
        "Is it red?\nIs it big?\n",
    );
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn eof_aborts_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let words = fixtures().join("words.txt");
    let out = run(
        dir.path(),
        &[
            "play",
            "guessing-word",
            "--provider",
            &script("guessing-short.json"),
            "--words",
            words.to_str().unwrap(),
            "--category",
            "vehicles",
            "--session-id",
            "eof",
        ],
        "Is it red?\n",
    );
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("outcome: aborted"));

    let export = run(dir.path(), &["export", "eof"], "");
    assert!(export.status.success());
    let transcript: serde_json::Value = serde_json::from_slice(&export.stdout).unwrap();
    assert_eq!(transcript.as_array().map(Vec::len), Some(4));
}

#[test]
fn seeding_and_listing() {
    let dir = tempfile::tempdir().unwrap();
    let lifelog = fixtures().join("lifelog");
    let out = run(
        dir.path(),
        &["seed-lifelog", lifelog.to_str().unwrap(), "--clock-start", "2024-09-21T09:00:00Z"],
        "",
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains('3'));

    let out = run(dir.path(), &["list-groups"], "");
    let listing = String::from_utf8_lossy(&out.stdout);
    assert!(listing.contains("guessing-word") && listing.contains("life-recall"), "{listing}");
}

#[test]
fn export_of_missing_session_fails() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), &["export", "nobody"], "");
    assert_eq!(out.status.code(), Some(1));
}
