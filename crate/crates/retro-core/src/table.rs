//! Row multisets with a primary-key index, and execution effects over them.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec::Vec;

use crate::catalog::{Catalog, TableSchema};
use crate::hash::TableHash;
use crate::value::Value;

/// Row payload in schema column order.
pub type Row = Arc<[Value]>;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TableData {
    rows: BTreeMap<Row, u32>,
    pk: Vec<usize>,
    pk_index: BTreeMap<Vec<Value>, Row>,
    len: usize,
    /// Highest AUTO_INCREMENT value issued or stored so far.
    pub counter: i64,
}

impl TableData {
    pub fn new(pk: Vec<usize>) -> Self {
        TableData { pk, ..Default::default() }
    }

    pub fn for_schema(s: &TableSchema) -> Self {
        TableData::new(s.primary_key.clone())
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn pk_columns(&self) -> &[usize] {
        &self.pk
    }

    pub fn key_of(&self, row: &[Value]) -> Vec<Value> {
        self.pk.iter().map(|&i| row[i].clone()).collect()
    }

    pub fn get_by_pk(&self, key: &[Value]) -> Option<&Row> {
        self.pk_index.get(key)
    }

    /// Rows whose key starts with `prefix`, in key order.
    pub fn pk_prefix<'a>(&'a self, prefix: &'a [Value]) -> impl Iterator<Item = &'a Row> + 'a {
        let start: Vec<Value> = prefix.to_vec();
        self.pk_index
            .range(start..)
            .take_while(move |(k, _)| k.len() >= prefix.len() && &k[..prefix.len()] == prefix)
            .map(|(_, r)| r)
    }

    pub fn has_pk(&self) -> bool {
        !self.pk.is_empty()
    }

    /// Caller checks key uniqueness first; a duplicate key replaces the index entry.
    pub fn insert(&mut self, row: Row) {
        if !self.pk.is_empty() {
            let k = self.key_of(&row);
            self.pk_index.insert(k, row.clone());
        }
        *self.rows.entry(row).or_insert(0) += 1;
        self.len += 1;
    }

    pub fn remove(&mut self, row: &[Value]) -> bool {
        let Some(n) = self.rows.get_mut(row) else { return false };
        *n -= 1;
        if *n == 0 {
            self.rows.remove(row);
        }
        if !self.pk.is_empty() {
            let k = self.key_of(row);
            if self.pk_index.get(&k).is_some_and(|r| &r[..] == row) {
                self.pk_index.remove(&k);
            }
        }
        self.len -= 1;
        true
    }

    pub fn contains(&self, row: &[Value]) -> bool {
        self.rows.contains_key(row)
    }

    /// Stable iteration order: primary-key order when the table has one, row order otherwise.
    pub fn iter(&self) -> impl Iterator<Item = &Row> + '_ {
        let by_pk: Option<_> = if self.pk.is_empty() { None } else { Some(self.pk_index.values()) };
        let by_row = if self.pk.is_empty() {
            Some(self.rows.iter().flat_map(|(r, &n)| core::iter::repeat_n(r, n as usize)))
        } else {
            None
        };
        by_pk.into_iter().flatten().chain(by_row.into_iter().flatten())
    }

    pub fn multiset(&self) -> &BTreeMap<Row, u32> {
        &self.rows
    }

    /// Rebuild with a different key layout (after ALTER TABLE).
    pub fn rekey(&self, pk: Vec<usize>) -> TableData {
        let mut t = TableData::new(pk);
        t.counter = self.counter;
        for r in self.iter() {
            t.insert(r.clone());
        }
        t
    }

    pub fn hash(&self, schema: &TableSchema) -> Result<TableHash, crate::error::HashError> {
        let mut h = TableHash::ZERO;
        for (r, &n) in &self.rows {
            let rh = crate::hash::row_hash(r, schema)?;
            for _ in 0..n {
                h = h.add(rh);
            }
        }
        Ok(h)
    }
}

/// Net change of one table by one statement.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TableDelta {
    pub existed_before: bool,
    pub exists_after: bool,
    pub deleted: Vec<Row>,
    pub inserted: Vec<Row>,
    pub hash_delta: TableHash,
    pub counter_after: i64,
}

impl TableDelta {
    pub fn is_noop(&self) -> bool {
        self.existed_before == self.exists_after && self.deleted.is_empty() && self.inserted.is_empty()
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExecEffect {
    pub tables: BTreeMap<String, TableDelta>,
    /// Result rows of a top-level SELECT.
    pub result: Vec<Vec<Value>>,
    pub aborted: Option<String>,
    /// Catalog after a DDL statement.
    pub catalog: Option<Arc<Catalog>>,
    /// Non-deterministic values consumed, in call order.
    pub nondet: Vec<(crate::sql::NondetFn, Value)>,
    /// AUTO_INCREMENT ids assigned, in order.
    pub auto_ids: Vec<(String, i64)>,
    /// Some nondet value had to be estimated instead of replayed.
    pub estimated: bool,
}

impl ExecEffect {
    pub fn aborted(reason: String) -> Self {
        ExecEffect { aborted: Some(reason), ..Default::default() }
    }

    pub fn modifies(&self, table: &str) -> bool {
        self.tables.get(table).is_some_and(|d| !d.is_noop())
    }
}

/// Apply a delta: deletes first, then inserts.
pub fn apply_delta(slot: &mut Option<Arc<TableData>>, d: &TableDelta, schema: Option<&TableSchema>) {
    if !d.exists_after {
        *slot = None;
        return;
    }
    let pk = schema.map(|s| s.primary_key.clone()).unwrap_or_default();
    let t = slot.get_or_insert_with(|| Arc::new(TableData::new(pk.clone())));
    let t = Arc::make_mut(t);
    if t.pk != pk {
        *t = t.rekey(pk);
    }
    for r in &d.deleted {
        let ok = t.remove(r);
        debug_assert!(ok, "delta deletes a missing row");
    }
    for r in &d.inserted {
        t.insert(r.clone());
    }
    t.counter = d.counter_after;
}
