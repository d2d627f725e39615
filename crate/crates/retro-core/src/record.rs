//! Committed log records and catalog evolution over a log.

use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::catalog::{apply_ddl, Catalog, CatalogHistory};
use crate::error::LogError;
use crate::sql::{parse_statement, NondetFn, Statement};

#[derive(Debug, Clone, PartialEq)]
pub struct NondetValue {
    pub func: NondetFn,
    pub seq: u32,
    pub value: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryRecord {
    pub idx: u64,
    /// Commit time in microseconds since the epoch.
    pub ts: i64,
    pub session: String,
    pub text: String,
    pub stmt: Statement,
    pub nondet: Vec<NondetValue>,
}

/// A log line before statement resolution. `line` is 1-based.
#[derive(Debug, Clone, PartialEq)]
pub struct RawRecord {
    pub line: usize,
    pub idx: u64,
    pub ts: i64,
    pub session: String,
    pub text: String,
    pub nondet: Vec<NondetValue>,
}

/// Resolve every statement against the catalog as of its index, replaying DDL as we go.
pub fn build_log(raw: Vec<RawRecord>, initial: Catalog) -> Result<(Vec<QueryRecord>, CatalogHistory), LogError> {
    let mut hist = CatalogHistory::new(initial);
    let mut out = Vec::with_capacity(raw.len());
    let mut last: Option<u64> = None;
    for r in raw {
        if r.idx == 0 || last.is_some_and(|l| r.idx <= l) {
            return Err(LogError::NonMonotonicIndex { line: r.line, idx: r.idx });
        }
        last = Some(r.idx);
        for (i, n) in r.nondet.iter().enumerate() {
            if n.seq as usize != i {
                return Err(LogError::MalformedLine { line: r.line, msg: "nondet sequence numbers must be dense from 0".to_string() });
            }
        }
        let cat = hist.current().clone();
        let stmt = parse_statement(&r.text, &cat, r.idx).map_err(|err| LogError::Sql { line: r.line, idx: r.idx, err })?;
        if stmt.is_ddl() && !matches!(stmt, Statement::TruncateTable(_)) {
            let next = apply_ddl(&cat, &stmt, r.idx).map_err(|err| LogError::Catalog { line: r.line, idx: r.idx, err })?;
            hist.push(r.idx, next);
        }
        out.push(QueryRecord { idx: r.idx, ts: r.ts, session: r.session, text: r.text, stmt, nondet: r.nondet });
    }
    Ok((out, hist))
}
