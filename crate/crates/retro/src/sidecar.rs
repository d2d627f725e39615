//! Ingest sidecars: `rwk.jsonl` (R/W/K per record) and `ledger.jsonl` (table hashes).

use std::collections::BTreeMap;
use std::path::Path;

use retro_core::cluster::ClusterKeySet;
use retro_core::hash::{HashLedger, TableHash};
use retro_core::rw::RWSet;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum KField {
    Keys(Vec<String>),
    Word(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RwkEntry {
    pub idx: u64,
    pub r: Vec<String>,
    pub w: Vec<String>,
    pub k: KField,
}

impl RwkEntry {
    pub fn new(idx: u64, rw: &RWSet, k: &ClusterKeySet) -> Self {
        RwkEntry {
            idx,
            r: rw.reads.iter().map(ToString::to_string).collect(),
            w: rw.writes.iter().map(ToString::to_string).collect(),
            k: match k.render() {
                Some(keys) => KField::Keys(keys),
                None => KField::Word("universal".into()),
            },
        }
    }

    pub fn is_universal(&self) -> bool {
        matches!(&self.k, KField::Word(_))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LedgerLine {
    idx: u64,
    table: String,
    hash: String,
}

fn lines<T, F>(text: &str, path: &Path, mut f: F) -> Result<Vec<T>, CliError>
where
    F: FnMut(&str) -> Result<T, String>,
{
    let mut out = Vec::new();
    for (i, l) in text.lines().enumerate() {
        if l.trim().is_empty() {
            continue;
        }
        out.push(f(l).map_err(|msg| CliError::Sidecar { path: path.into(), line: i + 1, msg })?);
    }
    Ok(out)
}

pub fn render_rwk(entries: &[RwkEntry]) -> String {
    entries.iter().map(|e| serde_json::to_string(e).expect("rwk entry serializes") + "\n").collect()
}

pub fn parse_rwk(text: &str, path: &Path) -> Result<Vec<RwkEntry>, CliError> {
    lines(text, path, |l| {
        let e: RwkEntry = serde_json::from_str(l).map_err(|e| e.to_string())?;
        match &e.k {
            KField::Word(w) if w != "universal" => Err(format!("k must be a list or \"universal\", got \"{}\"", w)),
            _ => Ok(e),
        }
    })
}

/// Entries ordered by commit index, then table name.
pub fn render_ledger(ledger: &HashLedger) -> String {
    let mut all: Vec<(u64, &str, TableHash)> =
        ledger.tables.iter().flat_map(|(t, l)| l.iter().map(move |(i, h)| (*i, t.as_str(), *h))).collect();
    all.sort();
    all.into_iter()
        .map(|(idx, table, h)| serde_json::to_string(&LedgerLine { idx, table: table.into(), hash: h.to_hex() }).expect("ledger line serializes") + "\n")
        .collect()
}

pub fn parse_ledger(text: &str, path: &Path) -> Result<HashLedger, CliError> {
    let entries = lines(text, path, |l| {
        let e: LedgerLine = serde_json::from_str(l).map_err(|e| e.to_string())?;
        let h = TableHash::from_hex(&e.hash).ok_or_else(|| format!("bad hash `{}`", e.hash))?;
        Ok((e.idx, e.table, h))
    })?;
    let mut out: BTreeMap<String, Vec<(u64, TableHash)>> = BTreeMap::new();
    for (i, (idx, table, h)) in entries.into_iter().enumerate() {
        let list = out.entry(table).or_default();
        if list.last().is_some_and(|(p, _)| *p >= idx) {
            return Err(CliError::Sidecar { path: path.into(), line: i + 1, msg: format!("index {} does not increase", idx) });
        }
        list.push((idx, h));
    }
    Ok(HashLedger { tables: out })
}

#[cfg(test)]
mod tests {
    use super::*;
    use retro_core::cluster::Key;
    use retro_core::rw::ColumnRef;
    use retro_core::value::Value;

    #[test]
    fn rwk_lines() {
        let mut rw = RWSet::default();
        rw.reads.insert(ColumnRef::new("Users", "uid"));
        rw.writes.insert(ColumnRef::new("Accounts", "balance"));
        let k = ClusterKeySet::Keys([Key::Point(ColumnRef::new("Users", "uid"), Value::text("alice"))].into_iter().collect());
        let e = RwkEntry::new(7, &rw, &k);
        let text = render_rwk(&[e.clone(), RwkEntry::new(8, &rw, &ClusterKeySet::Universal)]);
        assert_eq!(text.lines().next().unwrap(), r#"{"idx":7,"r":["Users.uid"],"w":["Accounts.balance"],"k":["Users.uid='alice'"]}"#);
        assert!(text.lines().nth(1).unwrap().ends_with(r#""k":"universal"}"#));
        let back = parse_rwk(&text, Path::new("x")).unwrap();
        assert_eq!(back[0], e);
        assert!(back[1].is_universal());
        assert!(parse_rwk(r#"{"idx":1,"r":[],"w":[],"k":"everything"}"#, Path::new("x")).is_err());
        assert!(parse_rwk(r#"{"idx":1,"r":[],"w":[],"k":[],"z":0}"#, Path::new("x")).is_err());
    }

    #[test]
    fn ledger_round_trip() {
        let mut l = HashLedger::default();
        l.record("B", 2, TableHash::from_hex(&"0f".repeat(32)).unwrap());
        l.record("A", 2, TableHash::ZERO);
        l.record("A", 5, TableHash::from_hex(&"a1".repeat(32)).unwrap());
        let text = render_ledger(&l);
        assert!(text.starts_with(r#"{"idx":2,"table":"A","hash":"0000"#));
        assert_eq!(parse_ledger(&text, Path::new("x")).unwrap(), l);
        let err = parse_ledger("{\"idx\":1,\"table\":\"A\",\"hash\":\"zz\"}\n", Path::new("l")).unwrap_err();
        assert_eq!(err.to_string(), "l:1: bad hash `zz`");
    }
}
