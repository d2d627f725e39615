//! JSON Lines query log.
//!
//! One record per line:
//! `{"idx":1,"ts":"2024-01-01T00:00:00Z","session":"s1","stmt":"...","nondet":[{"fn":"NOW","seq":0,"value":"..."}]}`.
//! Blank lines are skipped; unknown fields are rejected.

use std::path::Path;

use retro_core::catalog::{Catalog, CatalogHistory};
use retro_core::error::LogError;
use retro_core::exec::parse_nondet;
use retro_core::record::{build_log, NondetValue, QueryRecord, RawRecord};
use retro_core::sql::NondetFn;
use retro_core::value::{format_timestamp, parse_timestamp};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Line {
    idx: u64,
    ts: String,
    session: String,
    stmt: String,
    #[serde(default)]
    nondet: Vec<NondetLine>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NondetLine {
    #[serde(rename = "fn")]
    func: String,
    seq: u32,
    value: String,
}

pub fn format_rfc3339(micros: i64) -> String {
    format!("{}Z", format_timestamp(micros).replacen(' ', "T", 1))
}

/// Strict RFC 3339: date, `T`, time and an explicit offset.
pub fn parse_rfc3339(s: &str) -> Option<i64> {
    let b = s.as_bytes();
    if b.len() < 20 || !matches!(b[10], b'T' | b't') {
        return None;
    }
    let zoned = matches!(b[b.len() - 1], b'Z' | b'z') || (b.len() >= 25 && matches!(b[b.len() - 6], b'+' | b'-'));
    if !zoned {
        return None;
    }
    parse_timestamp(s)
}

fn malformed(line: usize, msg: impl Into<String>) -> LogError {
    LogError::MalformedLine { line, msg: msg.into() }
}

pub fn parse_log(text: &str) -> Result<Vec<RawRecord>, LogError> {
    let mut out = Vec::new();
    for (i, l) in text.lines().enumerate() {
        let line = i + 1;
        if l.trim().is_empty() {
            continue;
        }
        let r: Line = serde_json::from_str(l).map_err(|e| malformed(line, e.to_string()))?;
        let ts = parse_rfc3339(&r.ts).ok_or_else(|| malformed(line, format!("bad RFC 3339 timestamp `{}`", r.ts)))?;
        let mut nondet = Vec::with_capacity(r.nondet.len());
        for n in r.nondet {
            let func = NondetFn::from_name(&n.func).ok_or_else(|| malformed(line, format!("unknown function `{}`", n.func)))?;
            if parse_nondet(func, &n.value).is_none() {
                return Err(malformed(line, format!("bad {} value `{}`", func.name(), n.value)));
            }
            nondet.push(NondetValue { func, seq: n.seq, value: n.value });
        }
        out.push(RawRecord { line, idx: r.idx, ts, session: r.session, text: r.stmt, nondet });
    }
    Ok(out)
}

pub fn parse_records(text: &str) -> Result<(Vec<QueryRecord>, CatalogHistory), LogError> {
    build_log(parse_log(text)?, Catalog::default())
}

pub fn read_log(path: &Path) -> Result<(Vec<QueryRecord>, CatalogHistory), CliError> {
    let text = std::fs::read_to_string(path).map_err(CliError::io(path))?;
    parse_records(&text).map_err(|err| CliError::Log { path: path.into(), err })
}

pub fn render_log(records: &[QueryRecord]) -> String {
    let raw: Vec<RawRecord> = records
        .iter()
        .map(|r| RawRecord { line: 0, idx: r.idx, ts: r.ts, session: r.session.clone(), text: r.text.clone(), nondet: r.nondet.clone() })
        .collect();
    render_raw(&raw)
}

pub fn render_raw(records: &[RawRecord]) -> String {
    let mut s = String::new();
    for r in records {
        let line = Line {
            idx: r.idx,
            ts: format_rfc3339(r.ts),
            session: r.session.clone(),
            stmt: r.text.clone(),
            nondet: r.nondet.iter().map(|n| NondetLine { func: n.func.name().into(), seq: n.seq, value: n.value.clone() }).collect(),
        };
        s.push_str(&serde_json::to_string(&line).expect("log line serializes"));
        s.push('\n');
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn timestamps() {
        assert_eq!(parse_rfc3339("1970-01-01T00:00:01Z"), Some(1_000_000));
        assert_eq!(parse_rfc3339("1970-01-01T01:00:00+01:00"), Some(0));
        assert_eq!(parse_rfc3339("1970-01-01 00:00:01Z"), None);
        assert_eq!(parse_rfc3339("1970-01-01T00:00:01"), None);
        assert_eq!(format_rfc3339(1_500_000), "1970-01-01T00:00:01.500000Z");
        assert_eq!(parse_rfc3339(&format_rfc3339(1_500_000)), Some(1_500_000));
    }

    #[test]
    fn round_trip() {
        let text = concat!(
            r#"{"idx":1,"ts":"2024-01-01T00:00:00Z","session":"a","stmt":"CREATE TABLE T (id INT PRIMARY KEY, at TIMESTAMP)"}"#,
            "\n\n",
            r#"{"idx":3,"ts":"2024-01-01T00:00:01Z","session":"a","stmt":"INSERT INTO T VALUES (1, NOW())","nondet":[{"fn":"NOW","seq":0,"value":"2024-01-01 00:00:01"}]}"#,
            "\n"
        );
        let (recs, _) = parse_records(text).unwrap();
        assert_eq!(recs.len(), 2);
        assert_eq!(recs[1].nondet[0].func, NondetFn::Now);
        let again = render_log(&recs);
        let (recs2, _) = parse_records(&again).unwrap();
        assert_eq!(recs, recs2);
        assert_eq!(render_log(&recs2), again);
    }

    #[test]
    fn errors_carry_line_numbers() {
        let good = r#"{"idx":1,"ts":"2024-01-01T00:00:00Z","session":"a","stmt":"CREATE TABLE T (id INT)"}"#;
        let cases = [
            r#"{"idx":2,"ts":"2024-01-01T00:00:00Z","session":"a","stmt":"SELECT 1","extra":1}"#,
            r#"{"idx":2,"ts":"yesterday","session":"a","stmt":"SELECT * FROM T"}"#,
            r#"{"idx":2,"ts":"2024-01-01T00:00:00Z","session":"a","stmt":"SELECT * FROM T","nondet":[{"fn":"UUID","seq":0,"value":"x"}]}"#,
            r#"{"idx":2,"ts":"2024-01-01T00:00:00Z","session":"a","stmt":"SELEC * FROM T"}"#,
            r#"{"idx":1,"ts":"2024-01-01T00:00:00Z","session":"a","stmt":"SELECT * FROM T"}"#,
            "not json",
        ];
        for c in cases {
            let err = parse_records(&format!("{}\n{}\n", good, c)).unwrap_err();
            assert!(err.to_string().starts_with("line 2"), "{}", err);
        }
    }
}
