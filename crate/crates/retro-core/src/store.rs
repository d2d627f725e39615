//! Versioned table store: current state, per-table snapshot chains, the effect
//! log and the hash ledger.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec::Vec;

use crate::catalog::{Catalog, CatalogHistory};
use crate::error::{ExecError, StoreError};
use crate::exec::{execute, format_nondet, Database, ExecOptions};
use crate::hash::{HashLedger, TableHash};
use crate::record::{NondetValue, QueryRecord};
use crate::table::{apply_delta, ExecEffect, TableData};

pub const DEFAULT_CADENCE: usize = 256;

#[derive(Debug, Clone, Default)]
struct Chain {
    /// (idx, state after idx); `None` means the table does not exist.
    snapshots: Vec<(u64, Option<Arc<TableData>>)>,
    /// Commits that touched the table.
    writes: Vec<u64>,
    since_snapshot: usize,
}

#[derive(Debug, Clone)]
pub struct VersionedStore {
    pub cadence: usize,
    /// Index of the initial state; nothing before it can be reconstructed.
    pub first_idx: u64,
    pub catalogs: CatalogHistory,
    pub current: Database,
    effects: Vec<(u64, Arc<ExecEffect>)>,
    chains: BTreeMap<String, Chain>,
    pub ledger: HashLedger,
    running: BTreeMap<String, TableHash>,
}

impl Default for VersionedStore {
    fn default() -> Self {
        VersionedStore::new(DEFAULT_CADENCE)
    }
}

impl VersionedStore {
    pub fn new(cadence: usize) -> Self {
        VersionedStore::from_state(cadence, 0, Database::default())
    }

    /// Start from a known state at `first_idx` (e.g. an imported snapshot).
    pub fn from_state(cadence: usize, first_idx: u64, state: Database) -> Self {
        let mut chains = BTreeMap::new();
        let mut running = BTreeMap::new();
        let mut ledger = HashLedger::default();
        for (t, d) in &state.tables {
            chains.insert(t.clone(), Chain { snapshots: alloc::vec![(first_idx, Some(d.clone()))], ..Default::default() });
            let h = state.table_hash(t);
            running.insert(t.clone(), h);
            ledger.record(t, first_idx, h);
        }
        VersionedStore {
            cadence: cadence.max(1),
            first_idx,
            catalogs: CatalogHistory::new((*state.catalog).clone()),
            current: Database { writable: None, ..state },
            effects: Vec::new(),
            chains,
            ledger,
            running,
        }
    }

    pub fn last_idx(&self) -> u64 {
        self.effects.last().map(|(i, _)| *i).unwrap_or(self.first_idx)
    }

    pub fn effects(&self) -> &[(u64, Arc<ExecEffect>)] {
        &self.effects
    }

    pub fn effect(&self, idx: u64) -> Option<&Arc<ExecEffect>> {
        self.effects.binary_search_by_key(&idx, |(i, _)| *i).ok().map(|p| &self.effects[p].1)
    }

    pub fn table_names_ever(&self) -> impl Iterator<Item = &String> {
        self.chains.keys()
    }

    /// Record the effect of the statement committed at `idx` (already applied to
    /// nothing; this applies it to the current state).
    pub fn commit(&mut self, idx: u64, eff: ExecEffect) {
        debug_assert!(idx > self.last_idx() || self.effects.is_empty());
        if let Some(c) = &eff.catalog {
            self.catalogs.push(idx, (**c).clone());
        }
        crate::exec::apply_effect(&mut self.current, &eff);
        for (t, d) in &eff.tables {
            let chain = self.chains.entry(t.clone()).or_default();
            chain.writes.push(idx);
            chain.since_snapshot += 1;
            let existence = d.existed_before != d.exists_after;
            if existence || chain.since_snapshot >= self.cadence {
                chain.snapshots.push((idx, self.current.tables.get(t).cloned()));
                chain.since_snapshot = 0;
            }
            if !d.is_noop() {
                let h = self.running.entry(t.clone()).or_default();
                *h = h.add(d.hash_delta);
                self.ledger.record(t, idx, *h);
            }
        }
        self.effects.push((idx, Arc::new(eff)));
    }

    /// State of one table just after `idx`; `None` when it did not exist.
    pub fn as_of(&self, table: &str, idx: u64) -> Result<Option<Arc<TableData>>, StoreError> {
        if idx < self.first_idx {
            return Err(StoreError::NoSnapshot { table: table.into(), idx });
        }
        let Some(chain) = self.chains.get(table) else { return Ok(None) };
        let p = chain.snapshots.partition_point(|(i, _)| *i <= idx);
        if p == 0 {
            return Ok(None);
        }
        let (sidx, snap) = &chain.snapshots[p - 1];
        let mut slot = snap.clone();
        let lo = chain.writes.partition_point(|w| w <= sidx);
        let hi = chain.writes.partition_point(|w| *w <= idx);
        for &w in &chain.writes[lo..hi] {
            let eff = self.effect(w).expect("chain write has an effect");
            let d = &eff.tables[table];
            let cat = self.catalogs.as_of(w);
            apply_delta(&mut slot, d, cat.tables.get(table).map(|s| s.as_ref()));
        }
        Ok(slot)
    }

    pub fn catalog_at(&self, idx: u64) -> &Arc<Catalog> {
        self.catalogs.as_of(idx)
    }

    /// Writable view of the whole store as it was just after `idx`.
    pub fn rollback_to(&self, idx: u64) -> Result<Database, StoreError> {
        let cat = self.catalogs.as_of(idx).clone();
        let names: BTreeSet<String> = cat.tables.keys().cloned().collect();
        self.rollback_tables(idx, &names)
    }

    /// View at `idx` containing only `names` (absent tables are skipped).
    pub fn rollback_tables(&self, idx: u64, names: &BTreeSet<String>) -> Result<Database, StoreError> {
        if idx < self.first_idx {
            return Err(StoreError::NoSnapshot { table: String::new(), idx });
        }
        let mut db = Database::new(self.catalogs.as_of(idx).clone());
        for n in names {
            if let Some(t) = self.as_of(n, idx)? {
                db.tables.insert(n.clone(), t);
            }
        }
        Ok(db)
    }

    pub fn running_hash(&self, table: &str) -> TableHash {
        self.running.get(table).copied().unwrap_or_default()
    }

    /// Largest value ever stored in each table's AUTO_INCREMENT column.
    pub fn auto_increment_max(&self) -> BTreeMap<String, i64> {
        let mut out: BTreeMap<String, i64> = BTreeMap::new();
        for (t, d) in &self.current.tables {
            out.insert(t.clone(), d.counter);
        }
        for (idx, eff) in &self.effects {
            for (t, id) in &eff.auto_ids {
                let m = out.entry(t.clone()).or_insert(0);
                *m = (*m).max(*id);
            }
            let cat = self.catalogs.as_of(*idx);
            for (t, d) in &eff.tables {
                let m = out.entry(t.clone()).or_insert(0);
                *m = (*m).max(d.counter_after);
                let Some(ai) = cat.tables.get(t).and_then(|s| s.auto_increment_column()) else { continue };
                for r in &d.inserted {
                    if let Some(v) = r.get(ai).and_then(|v| v.as_int()) {
                        *m = (*m).max(v);
                    }
                }
            }
        }
        out
    }

    /// Replace mutated tables with their retroactive final state and rewrite their
    /// ledger entries from `from_idx` on. Other tables are untouched.
    pub fn sync(
        &mut self,
        finals: &BTreeMap<String, Option<Arc<TableData>>>,
        ledger: &BTreeMap<String, Vec<(u64, TableHash)>>,
        from_idx: u64,
    ) {
        for (t, d) in finals {
            match d {
                Some(d) => {
                    self.current.tables.insert(t.clone(), d.clone());
                }
                None => {
                    self.current.tables.remove(t);
                }
            }
        }
        for (t, entries) in ledger {
            let list = self.ledger.tables.entry(t.clone()).or_default();
            list.retain(|(i, _)| *i < from_idx);
            list.extend(entries.iter().filter(|(i, _)| *i >= from_idx).copied());
            if let Some((_, h)) = list.last() {
                self.running.insert(t.clone(), *h);
            }
        }
    }
}

/// Execute a log from an empty store in Regular mode. Records without recorded
/// non-deterministic values get the generated ones filled in.
pub fn ingest(records: &mut [QueryRecord], cadence: usize) -> Result<VersionedStore, ExecError> {
    let mut store = VersionedStore::new(cadence);
    for rec in records.iter_mut() {
        let eff = execute(&mut store.current.clone(), rec, &ExecOptions::regular())?;
        if rec.nondet.is_empty() && !eff.nondet.is_empty() {
            rec.nondet = eff
                .nondet
                .iter()
                .enumerate()
                .map(|(i, (f, v))| NondetValue { func: *f, seq: i as u32, value: format_nondet(v) })
                .collect();
        }
        store.commit(rec.idx, eff);
    }
    Ok(store)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::record::{build_log, RawRecord};

    fn log(stmts: &[&str]) -> Vec<QueryRecord> {
        let raw = stmts
            .iter()
            .enumerate()
            .map(|(i, s)| RawRecord { line: i + 1, idx: i as u64 + 1, ts: 0, session: "s".into(), text: (*s).into(), nondet: Vec::new() })
            .collect();
        build_log(raw, Catalog::default()).unwrap().0
    }

    fn counter_log(n: usize) -> Vec<QueryRecord> {
        let mut s: Vec<String> = alloc::vec!["CREATE TABLE T (id INT PRIMARY KEY AUTO_INCREMENT, v INT)".into()];
        for i in 0..n {
            s.push(if i % 3 == 2 {
                alloc::format!("DELETE FROM T WHERE id = {}", i)
            } else {
                alloc::format!("INSERT INTO T (v) VALUES ({})", i)
            });
        }
        let refs: Vec<&str> = s.iter().map(|x| x.as_str()).collect();
        log(&refs)
    }

    #[test]
    fn as_of_matches_replay_at_every_index() {
        let mut recs = counter_log(40);
        let store = ingest(&mut recs, 4).unwrap();
        let mut db = Database::default();
        for r in &recs {
            let e = execute(&mut db, r, &ExecOptions::regular()).unwrap();
            let got = store.as_of("T", r.idx).unwrap().unwrap();
            assert_eq!(got.multiset(), db.tables["T"].multiset(), "idx {}", r.idx);
            assert_eq!(store.ledger.at("T", r.idx).unwrap(), db.table_hash("T"));
            let _ = e;
        }
    }

    #[test]
    fn rollback_then_replay_is_identical() {
        let mut recs = counter_log(30);
        let store = ingest(&mut recs, 8).unwrap();
        let mut view = store.rollback_to(10).unwrap();
        for r in &recs[10..] {
            execute(&mut view, r, &ExecOptions::replay()).unwrap();
            assert_eq!(view.tables["T"].multiset(), store.as_of("T", r.idx).unwrap().unwrap().multiset());
        }
        let last = store.rollback_to(store.last_idx()).unwrap();
        assert_eq!(last.tables["T"].multiset(), store.current.tables["T"].multiset());
    }

    #[test]
    fn before_first_snapshot_fails() {
        let store = VersionedStore::from_state(4, 5, Database::default());
        assert!(matches!(store.rollback_to(3), Err(StoreError::NoSnapshot { .. })));
        assert!(store.as_of("T", 1).is_err());
    }

    #[test]
    fn sync_is_idempotent_and_local() {
        let mut recs = log(&["CREATE TABLE A (x INT)", "CREATE TABLE B (y INT)", "INSERT INTO A VALUES (1)", "INSERT INTO B VALUES (2)"]);
        let mut store = ingest(&mut recs, 4).unwrap();
        let b_before = store.current.tables["B"].clone();
        let mut finals = BTreeMap::new();
        finals.insert("A".into(), Some(Arc::new(TableData::new(Vec::new()))));
        let mut led = BTreeMap::new();
        led.insert("A".into(), alloc::vec![(3, TableHash::ZERO)]);
        store.sync(&finals, &led, 3);
        let once = (store.current.tables.clone(), store.ledger.clone());
        store.sync(&finals, &led, 3);
        assert_eq!(once.0, store.current.tables);
        assert_eq!(once.1, store.ledger);
        assert!(store.current.tables["A"].is_empty());
        assert_eq!(store.current.tables["B"], b_before);
        let empty = store.clone();
        store.sync(&BTreeMap::new(), &BTreeMap::new(), 3);
        assert_eq!(empty.current.tables, store.current.tables);
    }

    #[test]
    fn snapshots_are_immutable() {
        let mut recs = counter_log(20);
        let store = ingest(&mut recs, 2).unwrap();
        let h5 = store.as_of("T", 5).unwrap().unwrap().hash(&store.catalog_at(5).tables["T"]).unwrap();
        let mut s2 = store.clone();
        let mut e = recs[1].clone();
        e.idx = 100;
        let eff = execute(&mut s2.current.clone(), &e, &ExecOptions::regular()).unwrap();
        s2.commit(100, eff);
        assert_eq!(s2.as_of("T", 5).unwrap().unwrap().hash(&s2.catalog_at(5).tables["T"]).unwrap(), h5);
    }
}
