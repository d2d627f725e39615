use std::path::Path;
use std::process::{Command, Output};

fn retro(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_retro")).args(args).current_dir(cwd).env("RETRO_LOG_LEVEL", "error").output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn line(idx: u64, stmt: &str) -> String {
    serde_json::json!({"idx": idx, "ts": format!("2024-01-01T00:00:{:02}Z", idx % 60), "session": "s", "stmt": stmt}).to_string()
}

fn write_log(dir: &Path, stmts: &[&str]) {
    let text: String = stmts.iter().enumerate().map(|(i, s)| line(i as u64 + 1, s) + "\n").collect();
    std::fs::write(dir.join("log.jsonl"), text).unwrap();
}

fn snapshot_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = std::fs::read_dir(dir.join("D/snapshots"))
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap())
        })
        .collect();
    v.sort();
    v
}

const SMALL: [&str; 5] = [
    "CREATE TABLE T (id INT PRIMARY KEY, v INT)",
    "INSERT INTO T (id, v) VALUES (1, 10)",
    "INSERT INTO T (id, v) VALUES (2, 20)",
    "UPDATE T SET v = v + 1 WHERE id = 1",
    "INSERT INTO T (id, v) VALUES (3, 30)",
];

#[test]
fn usage_errors_exit_1() {
    let d = tempfile::tempdir().unwrap();
    assert_eq!(code(&retro(&["frobnicate"], d.path())), 1);
    assert_eq!(code(&retro(&["retro", "remove"], d.path())), 1);
    assert_eq!(code(&retro(&["ingest"], d.path())), 1);
    assert_eq!(code(&retro(&["--help"], d.path())), 0);
    write_log(d.path(), &SMALL);
    let o = retro(&["ingest", "log.jsonl"], d.path());
    assert_eq!(code(&o), 1, "{}", stderr(&o));
}

#[test]
fn malformed_line_names_the_line() {
    let d = tempfile::tempdir().unwrap();
    let mut text: String = SMALL.iter().enumerate().map(|(i, s)| line(i as u64 + 1, s) + "\n").collect();
    text += &line(6, "SELECT * FROM T");
    text += "\n{\"idx\": 7, \"ts\": \"2024-01-01T00:00:07Z\"\n";
    std::fs::write(d.path().join("log.jsonl"), text).unwrap();
    let o = retro(&["ingest", "log.jsonl", "--dir", "D"], d.path());
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("line 7"), "{}", stderr(&o));
    assert!(!d.path().join("D").exists());
}

#[test]
fn empty_log_ingests() {
    let d = tempfile::tempdir().unwrap();
    std::fs::write(d.path().join("log.jsonl"), "").unwrap();
    let o = retro(&["ingest", "log.jsonl", "--dir", "D"], d.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(std::fs::read_to_string(d.path().join("D/rwk.jsonl")).unwrap(), "");
    assert_eq!(std::fs::read_to_string(d.path().join("D/ledger.jsonl")).unwrap(), "");
}

#[test]
fn missing_artifacts_exit_2() {
    let d = tempfile::tempdir().unwrap();
    let o = retro(&["retro", "remove", "2", "--dir", "D"], d.path());
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("missing"), "{}", stderr(&o));
    assert_eq!(code(&retro(&["stats", "--dir", "D"], d.path())), 2);
}

#[test]
fn remove_rewrites_artifacts() {
    let d = tempfile::tempdir().unwrap();
    write_log(d.path(), &SMALL);
    assert_eq!(code(&retro(&["ingest", "log.jsonl", "--dir", "D"], d.path())), 0);
    let o = retro(&["retro", "remove", "2", "--dir", "D", "--verify", "--workers", "2"], d.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let log = std::fs::read_to_string(d.path().join("D/log.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 4);
    assert!(!log.contains("(1, 10)"));
    let stats: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(d.path().join("D/stats.json")).unwrap()).unwrap();
    assert_eq!(stats["verified"], true);
    assert_eq!(stats["target"]["idx"], 2);
    let o = retro(&["stats", "--dir", "D"], d.path());
    assert_eq!(code(&o), 0);
    assert!(String::from_utf8_lossy(&o.stdout).contains("reduction rate"));

    // the rewritten directory supports a further operation
    std::fs::write(d.path().join("new.sql"), "INSERT INTO T (id, v) VALUES (9, 90);\n").unwrap();
    let o = retro(&["retro", "add", "3", "--sql", "new.sql", "--dir", "D", "--verify"], d.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let log = std::fs::read_to_string(d.path().join("D/log.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 5);
    assert!(log.contains("(9, 90)"));
}

#[test]
fn parse_error_leaves_store_untouched() {
    let d = tempfile::tempdir().unwrap();
    write_log(d.path(), &SMALL);
    assert_eq!(code(&retro(&["ingest", "log.jsonl", "--dir", "D"], d.path())), 0);
    let before = snapshot_bytes(d.path());
    let log_before = std::fs::read(d.path().join("D/log.jsonl")).unwrap();
    std::fs::write(d.path().join("bad.sql"), "UPDAT T SET v = 0").unwrap();
    let o = retro(&["retro", "change", "4", "--sql", "bad.sql", "--dir", "D"], d.path());
    assert_eq!(code(&o), 2, "{}", stderr(&o));
    assert_eq!(snapshot_bytes(d.path()), before);
    assert_eq!(std::fs::read(d.path().join("D/log.jsonl")).unwrap(), log_before);
    assert!(!d.path().join("D/stats.json").exists());
    let o = retro(&["retro", "remove", "99", "--dir", "D"], d.path());
    assert_eq!(code(&o), 2, "{}", stderr(&o));
}

#[test]
fn ignored_columns_must_name_columns() {
    let d = tempfile::tempdir().unwrap();
    write_log(d.path(), &SMALL);
    assert_eq!(code(&retro(&["ingest", "log.jsonl", "--dir", "D"], d.path())), 0);
    let o = retro(&["retro", "remove", "2", "--dir", "D", "--ignore-columns", "nodot"], d.path());
    assert_eq!(code(&o), 2);
    let o = retro(&["retro", "remove", "2", "--dir", "D", "--workers", "0"], d.path());
    assert_eq!(code(&o), 2);
}

#[test]
fn gen_is_deterministic() {
    let d = tempfile::tempdir().unwrap();
    for out in ["a.jsonl", "b.jsonl"] {
        let o = retro(&["gen", "--template", "tatp-like", "--clusters", "5", "--queries", "200", "--seed", "7", "--out", out], d.path());
        assert_eq!(code(&o), 0, "{}", stderr(&o));
    }
    let a = std::fs::read(d.path().join("a.jsonl")).unwrap();
    assert_eq!(a, std::fs::read(d.path().join("b.jsonl")).unwrap());
    assert_eq!(String::from_utf8(a).unwrap().lines().count(), 200);
    let o = retro(&["gen", "--template", "bank", "--clusters", "0", "--queries", "10", "--out", "c.jsonl"], d.path());
    assert_eq!(code(&o), 2);
    let o = retro(&["gen", "--template", "nope", "--clusters", "1", "--queries", "10", "--out", "c.jsonl"], d.path());
    assert_eq!(code(&o), 1);
}

#[test]
fn ingest_artifacts_are_byte_stable() {
    let d = tempfile::tempdir().unwrap();
    let o = retro(&["gen", "--template", "mixed", "--clusters", "4", "--queries", "150", "--seed", "3", "--out", "log.jsonl"], d.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(code(&retro(&["ingest", "log.jsonl", "--dir", "D"], d.path())), 0);
    let read = |n: &str| std::fs::read(d.path().join("D").join(n)).unwrap();
    let first = (read("log.jsonl"), read("rwk.jsonl"), read("ledger.jsonl"), snapshot_bytes(d.path()));
    // ingesting the normalized log reproduces everything
    std::fs::copy(d.path().join("D/log.jsonl"), d.path().join("norm.jsonl")).unwrap();
    assert_eq!(code(&retro(&["ingest", "norm.jsonl", "--dir", "D"], d.path())), 0);
    assert_eq!(first, (read("log.jsonl"), read("rwk.jsonl"), read("ledger.jsonl"), snapshot_bytes(d.path())));
}

#[test]
fn snapshot_export_import() {
    let d = tempfile::tempdir().unwrap();
    write_log(d.path(), &SMALL);
    assert_eq!(code(&retro(&["ingest", "log.jsonl", "--dir", "D"], d.path())), 0);
    let o = retro(&["export-snapshot", "--dir", "D", "--table", "T", "--out", "t.snap"], d.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(std::fs::read(d.path().join("t.snap")).unwrap(), std::fs::read(d.path().join("D/snapshots/T.snap")).unwrap());
    let o = retro(&["export-snapshot", "--dir", "D", "--table", "T", "--out", "t3.snap", "--at", "3"], d.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let o = retro(&["import-snapshot", "t3.snap", "--dir", "D", "--at", "3"], d.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(String::from_utf8_lossy(&o.stdout).contains("matches"));
    let o = retro(&["import-snapshot", "t3.snap", "--dir", "D"], d.path());
    assert_eq!(code(&o), 0);
    assert!(String::from_utf8_lossy(&o.stdout).contains("differs"));
    std::fs::write(d.path().join("junk.snap"), b"\x01\x00\x00\x00garbage").unwrap();
    assert_eq!(code(&retro(&["import-snapshot", "junk.snap", "--dir", "D"], d.path())), 2);
    assert_eq!(code(&retro(&["export-snapshot", "--dir", "D", "--table", "Nope", "--out", "x.snap"], d.path())), 2);
}

#[test]
fn config_file_and_timings() {
    let d = tempfile::tempdir().unwrap();
    write_log(d.path(), &SMALL);
    std::fs::write(d.path().join("cfg.json"), r#"{"dir": "D", "workers": 2, "timings": true}"#).unwrap();
    let o = retro(&["--config", "cfg.json", "ingest", "log.jsonl"], d.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(d.path().join("D/timings.json").exists());
    let o = retro(&["--config", "cfg.json", "retro", "remove", "3"], d.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let o = retro(&["stats", "--dir", "D"], d.path());
    assert!(String::from_utf8_lossy(&o.stdout).contains("timings (ms)"));
    std::fs::write(d.path().join("bad.json"), r#"{"wrokers": 2}"#).unwrap();
    assert_eq!(code(&retro(&["--config", "bad.json", "ingest", "log.jsonl"], d.path())), 2);
}
