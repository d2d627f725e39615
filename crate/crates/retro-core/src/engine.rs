//! Retroactive operations end to end: analysis, replay plan, scheduled replay with
//! hash-jump, merge into the final state, and the full-replay oracle.
//!
//! The optimized run keeps the catalog history of the original log. Tables written
//! by the replay set (the diverged set) start from their state just before the
//! target and only see replayed statements; every other table is read as it was
//! originally. The final state of a diverged table is its original final state with
//! the original effects of the replayed statements taken out and the new ones put
//! in. Statements that change the schema of a diverged table, and schema-changing
//! targets, fall back to a full serial replay.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use sha2::{Digest, Sha256};

use crate::catalog::{hex, Catalog, CatalogHistory, TableSchema};
use crate::cluster::{
    choose_cluster_columns, deferred_links, extract_k, filter_replay_set, partition_queries, ClusterConfig, ClusterKeySet,
    Clustering, KOptions,
};
use crate::error::{EngineError, GraphError, SqlError, StoreError};
use crate::exec::{execute, AutoIncMode, Database, ExecOptions, Mode};
use crate::graph::{build_graph, prune_ignored_columns, replay_set, DependencyGraph, NodeRef, Pruned, ReplaySet, TargetKind, TargetSpec};
use crate::hash::TableHash;
use crate::record::QueryRecord;
use crate::rw::{extract_rw, ColumnRef, RWSet};
use crate::sql::{parse_statement, Statement};
use crate::store::VersionedStore;
use crate::table::{apply_delta, ExecEffect, Row, TableData};
use crate::value::Value;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RetroTarget {
    pub kind: TargetKind,
    pub idx: u64,
    /// New statement for Add and Change.
    pub sql: Option<String>,
}

impl RetroTarget {
    pub fn add(idx: u64, sql: &str) -> Self {
        RetroTarget { kind: TargetKind::Add, idx, sql: Some(sql.into()) }
    }

    pub fn remove(idx: u64) -> Self {
        RetroTarget { kind: TargetKind::Remove, idx, sql: None }
    }

    pub fn change(idx: u64, sql: &str) -> Self {
        RetroTarget { kind: TargetKind::Change, idx, sql: Some(sql.into()) }
    }
}

#[derive(Debug, Clone)]
pub struct RetroOptions {
    pub clustering: bool,
    pub hashjump: bool,
    /// Jump only when the replayed effects cancel row for row, not just by hash.
    pub literal_verify: bool,
    pub autoinc: AutoIncMode,
    pub ignore_columns: BTreeSet<ColumnRef>,
    pub fk_hints: Vec<(ColumnRef, ColumnRef)>,
    pub multi_key: bool,
}

impl Default for RetroOptions {
    fn default() -> Self {
        RetroOptions {
            clustering: true,
            hashjump: true,
            literal_verify: false,
            autoinc: AutoIncMode::Tombstone,
            ignore_columns: BTreeSet::new(),
            fk_hints: Vec::new(),
            multi_key: false,
        }
    }
}

/// A committed log with its executed store and per-record R/W sets.
#[derive(Debug, Clone, Copy)]
pub struct History<'a> {
    pub records: &'a [QueryRecord],
    pub store: &'a VersionedStore,
    pub rws: &'a BTreeMap<u64, RWSet>,
}

pub fn compute_rws(records: &[QueryRecord], hist: &CatalogHistory) -> Result<BTreeMap<u64, RWSet>, SqlError> {
    records.iter().map(|r| Ok((r.idx, extract_rw(&r.stmt, hist.as_of(r.idx - 1), r.idx)?))).collect()
}

/// SHA-256 over the schema digest followed by the table hash.
pub fn table_digest(schema: &TableSchema, h: TableHash) -> String {
    let mut s = Sha256::new();
    s.update(schema.digest());
    s.update(h.to_be_bytes());
    hex(&s.finalize())
}

pub fn digests(db: &Database) -> BTreeMap<String, String> {
    db.catalog.tables.iter().map(|(t, s)| (t.clone(), table_digest(s, db.table_hash(t)))).collect()
}

fn schema_changing(s: &Statement) -> bool {
    s.is_ddl() && !matches!(s, Statement::TruncateTable(_))
}

fn ddl_table(s: &Statement) -> Option<&str> {
    match s {
        Statement::CreateTable(ct) => Some(&ct.name),
        Statement::AlterTable(t, _) | Statement::DropTable(t) => Some(t),
        _ => None,
    }
}

struct Target<'a> {
    kind: TargetKind,
    window: (u64, u64),
    old: Option<&'a QueryRecord>,
    new: Option<QueryRecord>,
    spec: TargetSpec,
}

fn resolve_target<'a>(h: &History<'a>, t: &RetroTarget) -> Result<Target<'a>, EngineError> {
    let tau = t.idx;
    let last = h.records.last().map(|r| r.idx).unwrap_or(0).max(h.store.last_idx());
    let needs_old = t.kind != TargetKind::Add;
    let needs_new = t.kind != TargetKind::Remove;
    let at_tau = h.records.iter().find(|r| r.idx == tau);
    let old = at_tau.filter(|_| needs_old);
    if (needs_old && old.is_none()) || needs_new != t.sql.is_some() {
        return Err(GraphError::TargetKindMismatch(tau).into());
    }
    if tau == 0 || tau > last + 1 || (needs_old && tau > last) {
        return Err(GraphError::WindowOutOfRange { lo: tau, hi: last }.into());
    }
    if tau - 1 < h.store.first_idx {
        return Err(StoreError::NoSnapshot { table: String::new(), idx: tau - 1 }.into());
    }
    let cat = h.store.catalog_at(tau - 1);
    let new = match &t.sql {
        Some(sql) => {
            let stmt = parse_statement(sql, cat, tau)?;
            let ts = at_tau.or_else(|| h.records.iter().find(|r| r.idx >= tau)).or(h.records.last()).map(|r| r.ts).unwrap_or(0);
            Some(QueryRecord { idx: tau, ts, session: "retro".into(), text: sql.clone(), stmt, nondet: Vec::new() })
        }
        None => None,
    };
    let old_rw = old.map(|r| h.rws.get(&r.idx).cloned().ok_or(GraphError::TargetKindMismatch(tau))).transpose()?;
    let new_rw = match &new {
        Some(r) => Some(extract_rw(&r.stmt, cat, tau)?),
        None => None,
    };
    Ok(Target {
        kind: t.kind,
        window: (tau, last),
        old,
        new,
        spec: TargetSpec { kind: t.kind, idx: tau, old_rw, new_rw },
    })
}

/// Everything decided before replay starts.
#[derive(Debug, Clone)]
pub struct Analysis {
    pub window: (u64, u64),
    pub graph: DependencyGraph,
    /// Replay set before clustering.
    pub replay_set: ReplaySet,
    /// After dropping members outside the target's cluster.
    pub clustered: ReplaySet,
    pub clustering: Option<Clustering>,
    pub target_k: Option<ClusterKeySet>,
    pub pruned: Option<Pruned>,
    /// What actually gets replayed.
    pub final_set: ReplaySet,
    /// Tables written by the replayed statements or either target.
    pub diverged: BTreeSet<String>,
    pub fallback: bool,
    /// Non-read-only records in the window, counting the new statement.
    pub denominator: usize,
}

fn analyze_target(h: &History<'_>, t: &Target<'_>, opts: &RetroOptions) -> Result<Analysis, EngineError> {
    let (lo, hi) = t.window;
    let cat = h.store.catalog_at(lo - 1);
    let a = h.records.partition_point(|r| r.idx < lo);
    let b = h.records.partition_point(|r| r.idx <= hi);
    let window = &h.records[a..b];
    let queries: Vec<(u64, RWSet)> = window.iter().filter_map(|r| h.rws.get(&r.idx).map(|rw| (r.idx, rw.clone()))).collect();
    let hist = &h.store.catalogs;
    let graph = build_graph(&queries, hist, t.window, t.spec.clone())?;
    let rs = replay_set(&graph);

    let mut clustering = None;
    let mut target_k = None;
    let mut clustered = rs.clone();
    if opts.clustering && !rs.members.is_empty() {
        let kopts = KOptions { tombstone: opts.autoinc == AutoIncMode::Tombstone };
        let cfg = ClusterConfig { hints: opts.fk_hints.clone(), opts: Some(kopts), multi: opts.multi_key };
        let extra = t.new.as_ref().map(|r| (&r.stmt, cat.as_ref()));
        let c = choose_cluster_columns(h.records, h.rws, hist, t.window, extra, &cfg);
        if !c.scheme.is_empty() {
            let mut ks: BTreeMap<NodeRef, ClusterKeySet> = BTreeMap::new();
            let mut tk = ClusterKeySet::default();
            for (i, k) in &c.ksets {
                if *i == lo && t.kind != TargetKind::Add {
                    tk.union_with(k);
                } else {
                    ks.insert(NodeRef::Query(*i), k.clone());
                }
            }
            if let Some(r) = &t.new {
                tk.union_with(&extract_k(&r.stmt, cat, &c.scheme, &c.aliases, kopts));
            }
            ks.insert(NodeRef::Target, tk.clone());
            for tr in &graph.triggers {
                ks.insert(NodeRef::Trigger(tr.idx), ClusterKeySet::Deferred);
            }
            let links = deferred_links(&graph, &ks);
            let p = partition_queries(&ks, &links);
            clustered = filter_replay_set(&graph, &rs, &p);
            target_k = Some(tk);
        }
        clustering = Some(c);
    }

    let mut pruned = None;
    let mut final_set = clustered.clone();
    if !opts.ignore_columns.is_empty() {
        let p = prune_ignored_columns(&graph, &clustered, &opts.ignore_columns)?;
        final_set = p.replay_set.clone();
        pruned = Some(p);
    }

    let mut diverged = BTreeSet::new();
    for m in &final_set.members {
        let rw = if final_set.trigger_members.contains(m) {
            graph.triggers.iter().find(|x| x.idx == *m).map(|x| &x.rw)
        } else {
            h.rws.get(m)
        };
        if let Some(rw) = rw {
            diverged.extend(rw.written_tables());
        }
    }
    for rw in [&t.spec.old_rw, &t.spec.new_rw].into_iter().flatten() {
        diverged.extend(rw.written_tables());
    }
    // Views are never written; keep real tables only.
    diverged.retain(|x| !hist.versions().iter().any(|(_, c)| c.views.contains_key(x)) || cat.tables.contains_key(x));

    let target_ddl = t.old.is_some_and(|r| schema_changing(&r.stmt)) || t.new.as_ref().is_some_and(|r| schema_changing(&r.stmt));
    let window_ddl = window
        .iter()
        .filter(|r| !(r.idx == lo && t.kind != TargetKind::Add))
        .any(|r| ddl_table(&r.stmt).is_some_and(|x| diverged.contains(x)));
    let fallback = target_ddl || window_ddl;

    let mut denominator = window.iter().filter(|r| h.rws.get(&r.idx).is_some_and(|rw| !rw.is_read_only())).count();
    if t.kind == TargetKind::Add && t.spec.new_rw.as_ref().is_some_and(|rw| !rw.is_read_only()) {
        denominator += 1;
    }
    Ok(Analysis {
        window: t.window,
        graph,
        replay_set: rs,
        clustered,
        clustering,
        target_k,
        pruned,
        final_set,
        diverged,
        fallback,
        denominator,
    })
}

pub fn analyze(h: &History<'_>, target: &RetroTarget, opts: &RetroOptions) -> Result<Analysis, EngineError> {
    let t = resolve_target(h, target)?;
    analyze_target(h, &t, opts)
}

/// One schedulable statement with the diverged tables it reads and writes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlanNode {
    pub node: NodeRef,
    pub reads: BTreeSet<String>,
    pub writes: BTreeSet<String>,
}

/// Precedence DAG over plan nodes, listed in commit order. Two nodes conflict when
/// they share a table that at least one of them writes; every conflicting pair is
/// ordered, directly or through other edges.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ReplayPlan {
    pub nodes: Vec<PlanNode>,
    pub preds: Vec<Vec<usize>>,
}

impl ReplayPlan {
    pub fn new(nodes: Vec<PlanNode>) -> Self {
        let mut last_w: BTreeMap<String, usize> = BTreeMap::new();
        let mut readers: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        let mut preds = Vec::with_capacity(nodes.len());
        for (i, n) in nodes.iter().enumerate() {
            let mut p = BTreeSet::new();
            for t in n.reads.difference(&n.writes) {
                if let Some(w) = last_w.get(t) {
                    p.insert(*w);
                }
                readers.entry(t.clone()).or_default().push(i);
            }
            for t in &n.writes {
                if let Some(w) = last_w.get(t) {
                    p.insert(*w);
                }
                if let Some(rs) = readers.get_mut(t) {
                    p.extend(rs.drain(..));
                }
                last_w.insert(t.clone(), i);
            }
            preds.push(p.into_iter().collect());
        }
        ReplayPlan { nodes, preds }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn edge_count(&self) -> usize {
        self.preds.iter().map(Vec::len).sum()
    }

    pub fn successors(&self) -> Vec<Vec<usize>> {
        let mut s = vec![Vec::new(); self.nodes.len()];
        for (i, p) in self.preds.iter().enumerate() {
            for &q in p {
                s[q].push(i);
            }
        }
        s
    }

    pub fn conflicts(&self, a: usize, b: usize) -> bool {
        let (x, y) = (&self.nodes[a], &self.nodes[b]);
        x.writes.iter().any(|t| y.reads.contains(t) || y.writes.contains(t)) || y.writes.iter().any(|t| x.reads.contains(t))
    }

    /// Every node appears at most once and after all its predecessors.
    pub fn check_order(&self, order: &[usize]) -> Result<(), EngineError> {
        let mut pos = vec![usize::MAX; self.nodes.len()];
        for (k, &i) in order.iter().enumerate() {
            if i >= self.nodes.len() || pos[i] != usize::MAX {
                return Err(EngineError::Schedule(format!("node {} completed twice or unknown", i)));
            }
            pos[i] = k;
        }
        for &i in order {
            for &p in &self.preds[i] {
                if pos[p] == usize::MAX || pos[p] > pos[i] {
                    return Err(EngineError::Schedule(format!("{} completed before {}", self.nodes[i].node, self.nodes[p].node)));
                }
            }
        }
        Ok(())
    }

    /// "n -> m" per edge, predecessor first.
    pub fn dump(&self) -> String {
        let mut s = String::new();
        for (i, p) in self.preds.iter().enumerate() {
            for &q in p {
                s.push_str(&format!("{} -> {}\n", self.nodes[q].node, self.nodes[i].node));
            }
        }
        s
    }
}

/// A statement ready to run against its own store view.
pub struct NodeJob<'a> {
    pub db: Database,
    rec: Option<&'a QueryRecord>,
    recorded: &'a [(String, i64)],
    hist_max: Option<&'a BTreeMap<String, i64>>,
    autoinc: AutoIncMode,
}

pub struct NodeOutput {
    pub effect: Option<ExecEffect>,
    pub db: Database,
}

impl NodeJob<'_> {
    /// A job that runs no statement and hands `db` back.
    pub fn idle(db: Database) -> Self {
        NodeJob { db, rec: None, recorded: &[], hist_max: None, autoinc: AutoIncMode::Off }
    }

    pub fn run(mut self) -> Result<NodeOutput, EngineError> {
        let Some(rec) = self.rec else { return Ok(NodeOutput { effect: None, db: self.db }) };
        let opts = ExecOptions {
            mode: Mode::Replay,
            autoinc: self.autoinc,
            hist_max: self.hist_max,
            recorded_ids: self.recorded,
            estimate_nondet: true,
        };
        let eff = execute(&mut self.db, rec, &opts)?;
        Ok(NodeOutput { effect: Some(eff), db: self.db })
    }
}

/// Replay state driven by a scheduler: `prepare` and `complete` are called under
/// mutual exclusion, `NodeJob::run` may run concurrently.
pub trait ReplayWork<'a>: Send {
    fn prepare(&mut self, node: usize) -> Result<NodeJob<'a>, EngineError>;
    /// Returns true once no further nodes need to run.
    fn complete(&mut self, node: usize, out: NodeOutput) -> Result<bool, EngineError>;
}

pub trait Scheduler: Sync {
    /// Run plan nodes, each after all its predecessors completed, until done or
    /// told to stop. Returns the completion order.
    fn run<'a>(&self, plan: &ReplayPlan, work: &mut dyn ReplayWork<'a>) -> Result<Vec<usize>, EngineError>;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SerialScheduler;

impl Scheduler for SerialScheduler {
    fn run<'a>(&self, plan: &ReplayPlan, work: &mut dyn ReplayWork<'a>) -> Result<Vec<usize>, EngineError> {
        let mut order = Vec::with_capacity(plan.len());
        for i in 0..plan.len() {
            let out = work.prepare(i)?.run()?;
            order.push(i);
            if work.complete(i, out)? {
                break;
            }
        }
        Ok(order)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetroStats {
    pub window: (u64, u64),
    pub window_queries: usize,
    pub denominator: usize,
    pub i_size: usize,
    pub ik_size: usize,
    pub replayed: usize,
    pub jump_idx: Option<u64>,
    pub reduction_rate: f64,
    pub fallback: bool,
    pub scheme: Vec<String>,
    pub pruned: usize,
    pub plan_nodes: usize,
    pub plan_edges: usize,
    /// Abort reason of the new statement, which is kept as a no-op.
    pub target_aborted: Option<String>,
}

#[derive(Debug, Clone)]
pub struct RetroOutcome {
    pub stats: RetroStats,
    pub catalog: Arc<Catalog>,
    /// New contents of every table that may have changed.
    pub finals: BTreeMap<String, Option<Arc<TableData>>>,
    /// Rewritten ledger entries from the target on, per changed table.
    pub ledger: BTreeMap<String, Vec<(u64, TableHash)>>,
    pub digests: BTreeMap<String, String>,
    pub completion: Vec<NodeRef>,
    pub from_idx: u64,
}

impl RetroOutcome {
    pub fn database(&self, store: &VersionedStore) -> Database {
        final_db(store, &self.catalog, &self.finals)
    }
}

fn final_db(store: &VersionedStore, catalog: &Arc<Catalog>, finals: &BTreeMap<String, Option<Arc<TableData>>>) -> Database {
    let mut db = Database::new(catalog.clone());
    db.tables = store.current.tables.clone();
    for (t, d) in finals {
        match d {
            Some(d) => {
                db.tables.insert(t.clone(), d.clone());
            }
            None => {
                db.tables.remove(t);
            }
        }
    }
    db.tables.retain(|t, _| catalog.tables.contains_key(t));
    db
}

/// Make the outcome the store's current state and ledger.
pub fn apply_outcome(store: &mut VersionedStore, out: &RetroOutcome) {
    store.sync(&out.finals, &out.ledger, out.from_idx);
    store.current.catalog = out.catalog.clone();
}

fn add_rows(m: &mut BTreeMap<Row, i64>, rows: &[Row], sign: i64, keep: Option<&[usize]>) {
    for r in rows {
        let k = match keep {
            Some(k) => project(r, k),
            None => r.clone(),
        };
        let e = m.entry(k).or_insert(0);
        *e += sign;
        if *e == 0 {
            let k = match keep {
                Some(k) => project(r, k),
                None => r.clone(),
            };
            m.remove(&k);
        }
    }
}

fn project(r: &Row, keep: &[usize]) -> Row {
    keep.iter().map(|&i| r[i].clone()).collect::<Vec<Value>>().into()
}

struct Overlay<'a> {
    h: History<'a>,
    opts: &'a RetroOptions,
    plan: &'a ReplayPlan,
    recs: Vec<Option<&'a QueryRecord>>,
    /// Original record whose effect a node replaces.
    origs: Vec<Option<u64>>,
    check_at: Vec<Option<u64>>,
    catalogs: Vec<Arc<Catalog>>,
    prefetch: Vec<BTreeMap<String, Arc<TableData>>>,
    hist_max: &'a BTreeMap<String, i64>,
    diverged: &'a BTreeSet<String>,
    temp: BTreeMap<String, Arc<TableData>>,
    outs: Vec<Option<Arc<ExecEffect>>>,
    done: Vec<bool>,
    frontier: usize,
    new_sum: BTreeMap<String, TableHash>,
    orig_sum: BTreeMap<String, TableHash>,
    new_rows: BTreeMap<String, BTreeMap<Row, i64>>,
    orig_rows: BTreeMap<String, BTreeMap<Row, i64>>,
    new_ctr: BTreeMap<String, i64>,
    orig_ctr: BTreeMap<String, i64>,
    orig_cursor: usize,
    jumped: Option<(usize, u64)>,
}

impl<'a> Overlay<'a> {
    fn absorb(&mut self, p: usize) {
        let d = self.diverged;
        if let Some(o) = self.origs[p].and_then(|i| self.h.store.effect(i)) {
            for (t, delta) in o.tables.iter().filter(|(t, _)| d.contains(*t)) {
                let s = self.orig_sum.entry(t.clone()).or_default();
                *s = s.add(delta.hash_delta);
                if self.opts.literal_verify {
                    let m = self.orig_rows.entry(t.clone()).or_default();
                    add_rows(m, &delta.inserted, 1, None);
                    add_rows(m, &delta.deleted, -1, None);
                }
            }
        }
        if let Some(n) = self.outs[p].clone() {
            for (t, delta) in n.tables.iter().filter(|(t, _)| d.contains(*t)) {
                let s = self.new_sum.entry(t.clone()).or_default();
                *s = s.add(delta.hash_delta);
                self.new_ctr.insert(t.clone(), delta.counter_after);
                if self.opts.literal_verify {
                    let m = self.new_rows.entry(t.clone()).or_default();
                    add_rows(m, &delta.inserted, 1, None);
                    add_rows(m, &delta.deleted, -1, None);
                }
            }
        }
    }

    fn matches_original(&mut self, j: u64) -> bool {
        let effs = self.h.store.effects();
        while self.orig_cursor < effs.len() && effs[self.orig_cursor].0 <= j {
            for (t, delta) in &effs[self.orig_cursor].1.tables {
                if self.diverged.contains(t) {
                    self.orig_ctr.insert(t.clone(), delta.counter_after);
                }
            }
            self.orig_cursor += 1;
        }
        let zero = TableHash::ZERO;
        for t in self.diverged {
            if self.new_sum.get(t).unwrap_or(&zero) != self.orig_sum.get(t).unwrap_or(&zero) {
                return false;
            }
            if self.opts.autoinc == AutoIncMode::Off && self.new_ctr.get(t) != self.orig_ctr.get(t) {
                return false;
            }
            if self.opts.literal_verify && self.new_rows.get(t).filter(|m| !m.is_empty()) != self.orig_rows.get(t).filter(|m| !m.is_empty()) {
                return false;
            }
        }
        true
    }
}

impl<'a> ReplayWork<'a> for Overlay<'a> {
    fn prepare(&mut self, i: usize) -> Result<NodeJob<'a>, EngineError> {
        let n = &self.plan.nodes[i];
        let mut db = Database::new(self.catalogs[i].clone());
        db.tables = core::mem::take(&mut self.prefetch[i]);
        for t in n.reads.iter().chain(&n.writes) {
            if let Some(x) = self.temp.get(t) {
                db.tables.insert(t.clone(), x.clone());
            }
        }
        db.writable = Some(n.writes.clone());
        let recorded = match (n.node, self.opts.autoinc) {
            (NodeRef::Query(j), AutoIncMode::Tombstone) => self.h.store.effect(j).map(|e| e.auto_ids.as_slice()).unwrap_or(&[]),
            _ => &[],
        };
        Ok(NodeJob {
            db,
            rec: self.recs[i],
            recorded,
            hist_max: (self.opts.autoinc == AutoIncMode::Tombstone).then_some(self.hist_max),
            autoinc: self.opts.autoinc,
        })
    }

    fn complete(&mut self, i: usize, out: NodeOutput) -> Result<bool, EngineError> {
        if self.jumped.is_some() {
            return Ok(true);
        }
        for t in &self.plan.nodes[i].writes {
            match out.db.tables.get(t) {
                Some(x) => self.temp.insert(t.clone(), x.clone()),
                None => self.temp.remove(t),
            };
        }
        self.outs[i] = out.effect.map(Arc::new);
        self.done[i] = true;
        while self.frontier < self.plan.len() && self.done[self.frontier] {
            let p = self.frontier;
            self.frontier += 1;
            self.absorb(p);
            if let (true, Some(j)) = (self.opts.hashjump, self.check_at[p]) {
                if self.matches_original(j) {
                    self.jumped = Some((p, j));
                    return Ok(true);
                }
            }
        }
        Ok(false)
    }
}

/// Run a retroactive operation.
pub fn run(h: &History<'_>, target: &RetroTarget, opts: &RetroOptions, sched: &dyn Scheduler) -> Result<RetroOutcome, EngineError> {
    let t = resolve_target(h, target)?;
    let an = analyze_target(h, &t, opts)?;
    run_analyzed(h, &t, &an, opts, sched)
}

fn run_analyzed(h: &History<'_>, t: &Target<'_>, an: &Analysis, opts: &RetroOptions, sched: &dyn Scheduler) -> Result<RetroOutcome, EngineError> {
    let (lo, hi) = t.window;
    let window_queries = h.records.iter().filter(|r| r.idx >= lo && r.idx <= hi).count();
    let mut stats = RetroStats {
        window: t.window,
        window_queries,
        denominator: an.denominator,
        i_size: an.replay_set.members.len(),
        ik_size: an.clustered.members.len(),
        replayed: 0,
        jump_idx: None,
        reduction_rate: 0.0,
        fallback: an.fallback,
        scheme: an.clustering.as_ref().map(|c| c.scheme.keys.iter().map(|k| format!("{}", k)).collect()).unwrap_or_default(),
        pruned: an.pruned.as_ref().map(|p| p.dropped.len()).unwrap_or(0),
        plan_nodes: 0,
        plan_edges: 0,
        target_aborted: None,
    };
    let mut out = if an.fallback {
        let r = full_replay(h, t, opts.autoinc, opts.hashjump.then_some(opts.literal_verify))?;
        stats.replayed = r.executed;
        stats.jump_idx = r.jump_idx;
        stats.target_aborted = r.target_aborted.clone();
        let finals: BTreeMap<String, Option<Arc<TableData>>> = h
            .store
            .table_names_ever()
            .chain(r.db.catalog.tables.keys())
            .map(|n| (n.clone(), r.db.tables.get(n).cloned()))
            .collect();
        RetroOutcome {
            stats: stats.clone(),
            catalog: r.db.catalog.clone(),
            finals,
            ledger: r.ledger,
            digests: digests(&r.db),
            completion: Vec::new(),
            from_idx: lo,
        }
    } else {
        overlay_run(h, t, an, opts, sched, &mut stats)?
    };
    stats.reduction_rate = if stats.denominator == 0 { 0.0 } else { 1.0 - stats.replayed as f64 / stats.denominator as f64 };
    out.stats = stats;
    Ok(out)
}

fn overlay_run(
    h: &History<'_>,
    t: &Target<'_>,
    an: &Analysis,
    opts: &RetroOptions,
    sched: &dyn Scheduler,
    stats: &mut RetroStats,
) -> Result<RetroOutcome, EngineError> {
    let (lo, hi) = t.window;
    let store = h.store;
    let d = &an.diverged;
    let rs = &an.final_set;
    let by_idx: BTreeMap<u64, &QueryRecord> = h.records.iter().filter(|r| r.idx >= lo && r.idx <= hi).map(|r| (r.idx, r)).collect();

    // Plan: the target, then replayed statements in commit order.
    let mut nodes = Vec::new();
    let mut recs: Vec<Option<&QueryRecord>> = Vec::new();
    let mut origs = Vec::new();
    let mut check_at = Vec::new();
    let mut catalogs = Vec::new();
    let only_d = |rw: &RWSet, reads: bool| -> BTreeSet<String> {
        let s = if reads { rw.accessed_tables() } else { rw.written_tables() };
        s.into_iter().filter(|x| d.contains(x)).collect()
    };
    {
        let (reads, writes) = match &t.spec.new_rw {
            Some(rw) if !t.new.as_ref().is_some_and(|r| schema_changing(&r.stmt)) => (only_d(rw, true), only_d(rw, false)),
            _ => (BTreeSet::new(), BTreeSet::new()),
        };
        nodes.push(PlanNode { node: NodeRef::Target, reads, writes });
        recs.push(t.new.as_ref());
        origs.push(t.old.map(|r| r.idx));
        check_at.push((t.kind != TargetKind::Add).then_some(lo));
        catalogs.push(store.catalog_at(lo - 1).clone());
    }
    let mut noop_members = 0usize;
    for m in rs.members.iter().filter(|m| !rs.trigger_members.contains(m)) {
        let Some(rec) = by_idx.get(m) else { continue };
        let rw = &h.rws[m];
        let ddl = schema_changing(&rec.stmt);
        if ddl {
            noop_members += 1;
        }
        let (reads, writes) = if ddl { (BTreeSet::new(), BTreeSet::new()) } else { (only_d(rw, true), only_d(rw, false)) };
        nodes.push(PlanNode { node: NodeRef::Query(*m), reads, writes });
        recs.push((!ddl).then_some(*rec));
        origs.push((!ddl).then_some(*m));
        check_at.push(Some(*m));
        catalogs.push(store.catalog_at(m - 1).clone());
    }
    let _ = noop_members;
    let plan = ReplayPlan::new(nodes);
    stats.plan_nodes = plan.len();
    stats.plan_edges = plan.edge_count();

    // Undiverged tables as they were just before each node.
    let others: BTreeSet<String> = store.table_names_ever().filter(|x| !d.contains(*x)).cloned().collect();
    let mut cur = store.rollback_tables(lo - 1, &others)?.tables;
    let effs = store.effects();
    let mut e = effs.partition_point(|(i, _)| *i < lo);
    let mut prefetch = Vec::with_capacity(plan.len());
    for n in &plan.nodes {
        let at = match n.node {
            NodeRef::Query(j) => j,
            _ => lo,
        };
        while e < effs.len() && effs[e].0 < at {
            let (idx, eff) = &effs[e];
            let cat = store.catalog_at(*idx);
            for (x, delta) in eff.tables.iter().filter(|(x, _)| !d.contains(*x)) {
                let mut slot = cur.remove(x);
                apply_delta(&mut slot, delta, cat.tables.get(x).map(|s| s.as_ref()));
                if let Some(s) = slot {
                    cur.insert(x.clone(), s);
                }
            }
            e += 1;
        }
        prefetch.push(cur.clone());
    }
    drop(cur);

    let hist_max = store.auto_increment_max();
    let start = store.rollback_tables(lo - 1, d)?;
    let mut init_ctr = BTreeMap::new();
    for (x, td) in &start.tables {
        init_ctr.insert(x.clone(), td.counter);
    }
    let orig_cursor = effs.partition_point(|(i, _)| *i < lo);
    let mut work = Overlay {
        h: *h,
        opts,
        plan: &plan,
        recs,
        origs,
        check_at,
        catalogs,
        prefetch,
        hist_max: &hist_max,
        diverged: d,
        temp: start.tables,
        outs: vec![None; plan.len()],
        done: vec![false; plan.len()],
        frontier: 0,
        new_sum: BTreeMap::new(),
        orig_sum: BTreeMap::new(),
        new_rows: BTreeMap::new(),
        orig_rows: BTreeMap::new(),
        new_ctr: init_ctr.clone(),
        orig_ctr: init_ctr,
        orig_cursor,
        jumped: None,
    };
    let order = sched.run(&plan, &mut work)?;
    plan.check_order(&order)?;
    if work.jumped.is_none() && work.frontier != plan.len() {
        return Err(EngineError::Schedule(format!("{} of {} nodes completed", work.frontier, plan.len())));
    }
    let completion: Vec<NodeRef> = order.iter().map(|&i| plan.nodes[i].node).collect();
    stats.target_aborted = work.outs[0].as_ref().and_then(|e| e.aborted.clone());

    // Nodes whose effects count: all of them, or those up to the jump.
    let upto = work.jumped.map(|(p, _)| p + 1).unwrap_or(plan.len());
    stats.jump_idx = work.jumped.map(|(_, j)| j);
    let replayed_queries = plan.nodes[1..upto].len();
    stats.replayed = replayed_queries + rs.trigger_members.len();

    let cat = store.current.catalog.clone();
    let mut finals = BTreeMap::new();
    let mut ledger = BTreeMap::new();
    let ignored: BTreeMap<String, Vec<usize>> = match &an.pruned {
        Some(p) => {
            let mut m: BTreeMap<String, Vec<usize>> = BTreeMap::new();
            for c in &p.ignored {
                if let Some(i) = cat.tables.get(&c.table).and_then(|s| s.col_index(&c.column)) {
                    m.entry(c.table.clone()).or_default().push(i);
                }
            }
            m
        }
        None => BTreeMap::new(),
    };
    for x in d {
        let orig_final = store.current.tables.get(x).cloned();
        let Some(schema) = cat.tables.get(x) else {
            finals.insert(x.clone(), orig_final);
            continue;
        };
        let final_t = if work.jumped.is_some() {
            orig_final.clone()
        } else {
            Some(Arc::new(merge_table(x, schema, orig_final.as_deref(), &work, ignored.get(x))?))
        };
        // Ledger: original hashes shifted by the replayed nodes' hash difference.
        let mut adj: BTreeMap<u64, TableHash> = BTreeMap::new();
        for p in 0..upto {
            let at = match plan.nodes[p].node {
                NodeRef::Query(j) => j,
                _ => lo,
            };
            let mut delta = TableHash::ZERO;
            if let Some(o) = work.origs[p].and_then(|i| store.effect(i)).and_then(|e| e.tables.get(x)) {
                delta = delta.sub(o.hash_delta);
            }
            if let Some(n) = work.outs[p].as_ref().and_then(|e| e.tables.get(x)) {
                delta = delta.add(n.hash_delta);
            }
            if delta != TableHash::ZERO || work.origs[p].is_some_and(|i| store.effect(i).is_some_and(|e| e.modifies(x))) {
                let a = adj.entry(at).or_default();
                *a = a.add(delta);
            }
        }
        let mut points: BTreeSet<u64> = adj.keys().copied().collect();
        if let Some(l) = store.ledger.tables.get(x) {
            points.extend(l.iter().map(|(i, _)| *i).filter(|i| *i >= lo));
        }
        let mut run_adj = TableHash::ZERO;
        let mut entries = Vec::new();
        for k in points {
            if let Some(a) = adj.get(&k) {
                run_adj = run_adj.add(*a);
            }
            let base = store.ledger.at(x, k).unwrap_or(TableHash::ZERO);
            entries.push((k, base.add(run_adj)));
        }
        if let Some(f) = &final_t {
            let real = f.hash(schema).map_err(EngineError::Hash)?;
            let virt = entries.last().map(|e| e.1).unwrap_or_else(|| store.ledger.at(x, lo - 1).unwrap_or(TableHash::ZERO));
            if real != virt {
                // Pruned writers are not tracked; pin the final hash.
                let at = entries.last().map(|e| e.0).unwrap_or(hi).max(hi);
                match entries.last_mut() {
                    Some(l) if l.0 == at => l.1 = real,
                    _ => entries.push((at, real)),
                }
            }
        }
        ledger.insert(x.clone(), entries);
        finals.insert(x.clone(), final_t);
    }
    let db = final_db(store, &cat, &finals);
    Ok(RetroOutcome { stats: stats.clone(), catalog: cat, finals, ledger, digests: digests(&db), completion, from_idx: lo })
}

/// Original final state, minus the original effects of replayed statements, plus
/// their new effects. Tables with ignored columns merge on the remaining columns
/// and take ignored values from matching original rows.
fn merge_table(
    name: &str,
    schema: &TableSchema,
    orig_final: Option<&TableData>,
    w: &Overlay<'_>,
    ignored: Option<&Vec<usize>>,
) -> Result<TableData, EngineError> {
    let keep: Option<Vec<usize>> = ignored.map(|ig| (0..schema.columns.len()).filter(|i| !ig.contains(i)).collect());
    let keep = keep.as_deref();
    let mut m: BTreeMap<Row, i64> = BTreeMap::new();
    if let Some(t) = orig_final {
        for (r, c) in t.multiset() {
            let k = match keep {
                Some(k) => project(r, k),
                None => r.clone(),
            };
            *m.entry(k).or_insert(0) += *c as i64;
        }
    }
    let mut counter = orig_final.map(|t| t.counter).unwrap_or(0);
    let mut fresh: BTreeMap<Row, Vec<Row>> = BTreeMap::new();
    for p in 0..w.plan.len() {
        if let Some(o) = w.origs[p].and_then(|i| w.h.store.effect(i)).and_then(|e| e.tables.get(name)) {
            add_rows(&mut m, &o.deleted, 1, keep);
            add_rows(&mut m, &o.inserted, -1, keep);
        }
        if let Some(n) = w.outs[p].as_ref().and_then(|e| e.tables.get(name)) {
            add_rows(&mut m, &n.inserted, 1, keep);
            add_rows(&mut m, &n.deleted, -1, keep);
            counter = counter.max(n.counter_after);
            if let Some(k) = keep {
                for r in &n.inserted {
                    fresh.entry(project(r, k)).or_default().push(r.clone());
                }
            }
        }
    }
    if let Some(t) = w.temp.get(name) {
        counter = counter.max(t.counter);
    }
    if w.opts.autoinc == AutoIncMode::Off {
        if let Some(t) = w.temp.get(name) {
            counter = t.counter;
        }
    }
    let mut out = TableData::new(schema.primary_key.clone());
    out.counter = counter;
    let mut pool: BTreeMap<Row, Vec<Row>> = BTreeMap::new();
    if let (Some(k), Some(t)) = (keep, orig_final) {
        for r in t.iter() {
            pool.entry(project(r, k)).or_default().push(r.clone());
        }
    }
    for (r, c) in m {
        if c < 0 {
            return Err(EngineError::Schedule(format!("merge of {} removes a row it does not have", name)));
        }
        for _ in 0..c {
            let full = match keep {
                None => r.clone(),
                Some(k) => match pool.get_mut(&r).and_then(|v| v.pop()) {
                    Some(x) => x,
                    None => match fresh.get(&r).and_then(|v| v.last()) {
                        Some(x) => x.clone(),
                        None => {
                            let mut v = vec![Value::Null; schema.columns.len()];
                            for (pos, &i) in k.iter().enumerate() {
                                v[i] = r[pos].clone();
                            }
                            v.into()
                        }
                    },
                },
            };
            out.insert(full);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct OracleResult {
    pub db: Database,
    pub ledger: BTreeMap<String, Vec<(u64, TableHash)>>,
    /// Original non-read-only records executed.
    pub executed: usize,
    pub jump_idx: Option<u64>,
    pub target_aborted: Option<String>,
}

impl OracleResult {
    pub fn digests(&self) -> BTreeMap<String, String> {
        digests(&self.db)
    }
}

/// Serial replay of the whole rewritten window from the state before the target.
/// `jump` enables the hash-jump (with row-level confirmation when true).
fn full_replay(h: &History<'_>, t: &Target<'_>, autoinc: AutoIncMode, jump: Option<bool>) -> Result<OracleResult, EngineError> {
    let (lo, hi) = t.window;
    let store = h.store;
    let mut db = store.rollback_to(lo - 1)?;
    let hist_max = store.auto_increment_max();
    let mut names: BTreeSet<String> = store.table_names_ever().cloned().collect();
    let mut running: BTreeMap<String, TableHash> =
        names.iter().map(|n| (n.clone(), store.ledger.at(n, lo - 1).unwrap_or(TableHash::ZERO))).collect();
    let mut ledger: BTreeMap<String, Vec<(u64, TableHash)>> = names.iter().map(|n| (n.clone(), Vec::new())).collect();
    let mut res = OracleResult { db: Database::default(), ledger: BTreeMap::new(), executed: 0, jump_idx: None, target_aborted: None };

    type Ledger = BTreeMap<String, Vec<(u64, TableHash)>>;
    let exec_one = |db: &mut Database,
                    rec: &QueryRecord,
                    original: bool,
                    running: &mut BTreeMap<String, TableHash>,
                    ledger: &mut Ledger|
     -> Result<ExecEffect, EngineError> {
        let recorded: &[(String, i64)] = match (original, autoinc) {
            (true, AutoIncMode::Tombstone) => store.effect(rec.idx).map(|e| e.auto_ids.as_slice()).unwrap_or(&[]),
            _ => &[],
        };
        let opts = ExecOptions {
            mode: Mode::Replay,
            autoinc,
            hist_max: (autoinc == AutoIncMode::Tombstone).then_some(&hist_max),
            recorded_ids: recorded,
            estimate_nondet: true,
        };
        let eff = execute(db, rec, &opts)?;
        for (x, d) in &eff.tables {
            if d.is_noop() {
                continue;
            }
            let r = running.entry(x.clone()).or_default();
            *r = r.add(d.hash_delta);
            let l = ledger.entry(x.clone()).or_default();
            match l.last_mut() {
                Some(last) if last.0 == rec.idx => last.1 = *r,
                _ => l.push((rec.idx, *r)),
            }
        }
        Ok(eff)
    };

    let a = h.records.partition_point(|r| r.idx < lo);
    let b = h.records.partition_point(|r| r.idx <= hi);
    let mut steps: Vec<(Option<&QueryRecord>, u64)> = Vec::new();
    if t.kind == TargetKind::Add && h.records[a..b].first().is_none_or(|r| r.idx != lo) {
        steps.push((None, lo));
    }
    for r in &h.records[a..b] {
        steps.push((Some(r), r.idx));
    }
    for (rec, j) in steps {
        let is_target = j == lo;
        if is_target {
            if let Some(n) = &t.new {
                let eff = exec_one(&mut db, n, false, &mut running, &mut ledger)?;
                res.target_aborted = eff.aborted;
            }
        }
        if let Some(r) = rec {
            if !(is_target && t.kind != TargetKind::Add) {
                exec_one(&mut db, r, true, &mut running, &mut ledger)?;
                if h.rws.get(&r.idx).is_some_and(|rw| !rw.is_read_only()) {
                    res.executed += 1;
                }
            }
        }
        let Some(literal) = jump else { continue };
        if rec.is_none() && t.kind == TargetKind::Add {
            continue;
        }
        if same_as_original(store, &db, &running, j, autoinc, literal)? {
            res.jump_idx = Some(j);
            for (x, l) in ledger.iter_mut() {
                if let Some(orig) = store.ledger.tables.get(x) {
                    l.extend(orig.iter().filter(|(i, _)| *i > j).copied());
                }
            }
            db = store.current.clone();
            break;
        }
    }
    names.extend(db.catalog.tables.keys().cloned());
    for n in &names {
        ledger.entry(n.clone()).or_default();
    }
    db.writable = None;
    res.db = db;
    res.ledger = ledger;
    Ok(res)
}

fn same_as_original(
    store: &VersionedStore,
    db: &Database,
    running: &BTreeMap<String, TableHash>,
    j: u64,
    autoinc: AutoIncMode,
    literal: bool,
) -> Result<bool, EngineError> {
    let cat = store.catalog_at(j);
    if !Arc::ptr_eq(cat, &db.catalog) && **cat != *db.catalog {
        return Ok(false);
    }
    for (x, h) in running {
        if store.ledger.at(x, j).unwrap_or(TableHash::ZERO) != *h {
            return Ok(false);
        }
    }
    for x in cat.tables.keys() {
        let orig = store.as_of(x, j)?;
        let mine = db.tables.get(x);
        if autoinc == AutoIncMode::Off && orig.as_ref().map(|t| t.counter) != mine.map(|t| t.counter) {
            return Ok(false);
        }
        if literal && orig.as_ref().map(|t| t.multiset()) != mine.map(|t| t.multiset()) {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Ground truth: roll everything back to just before the target and replay the
/// rewritten log serially.
pub fn oracle_run(h: &History<'_>, target: &RetroTarget, autoinc: AutoIncMode) -> Result<OracleResult, EngineError> {
    let t = resolve_target(h, target)?;
    full_replay(h, &t, autoinc, None)
}

/// Rewritten log: the original records with the target applied. Indices of
/// records after the target are unchanged; an added statement takes index τ and
/// a record already at τ moves to the free slot after it only if there is one.
pub fn rewritten_log(records: &[QueryRecord], target: &RetroTarget, new: Option<QueryRecord>) -> Vec<QueryRecord> {
    let mut out = Vec::with_capacity(records.len() + 1);
    for r in records {
        if r.idx == target.idx {
            match target.kind {
                TargetKind::Remove => continue,
                TargetKind::Change => {
                    if let Some(n) = &new {
                        out.push(n.clone());
                    }
                    continue;
                }
                TargetKind::Add => {
                    if let Some(n) = &new {
                        out.push(n.clone());
                    }
                }
            }
        }
        out.push(r.clone());
    }
    if target.kind == TargetKind::Add && !records.iter().any(|r| r.idx == target.idx) {
        if let Some(n) = new {
            let p = out.partition_point(|r| r.idx < n.idx);
            out.insert(p, n);
        }
    }
    out
}
