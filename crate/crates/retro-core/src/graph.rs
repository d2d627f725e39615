//! Column-wise query dependency graph and the replay set.

use alloc::collections::{BTreeMap, BTreeSet, VecDeque};
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt::Write;

use crate::catalog::{CatalogHistory, TriggerInterval};
use crate::error::{GraphError, SqlError};
use crate::rw::{trigger_body_rw, ColumnRef, RWSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum TargetKind {
    Add,
    Remove,
    Change,
}

/// Read/write sets of the retroactive target.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetSpec {
    pub kind: TargetKind,
    pub idx: u64,
    /// The committed record at `idx` (remove and change).
    pub old_rw: Option<RWSet>,
    /// The new statement (add and change).
    pub new_rw: Option<RWSet>,
}

impl TargetSpec {
    /// Columns whose history the operation changes.
    pub fn writes(&self) -> BTreeSet<ColumnRef> {
        let mut w = BTreeSet::new();
        for r in [&self.old_rw, &self.new_rw].into_iter().flatten() {
            w.extend(r.writes.iter().cloned());
        }
        w
    }

    pub fn combined(&self) -> RWSet {
        let mut out = RWSet::default();
        for r in [&self.old_rw, &self.new_rw].into_iter().flatten() {
            out.union_with(r);
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum NodeRef {
    /// The retroactive target, placed just before the window's first record.
    Target,
    Query(u64),
    /// A trigger, identified by the index of the statement that created it.
    Trigger(u64),
}

impl NodeRef {
    pub fn idx(&self) -> Option<u64> {
        match self {
            NodeRef::Target => None,
            NodeRef::Query(i) | NodeRef::Trigger(i) => Some(*i),
        }
    }
}

impl core::fmt::Display for NodeRef {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            NodeRef::Target => write!(f, "target"),
            NodeRef::Query(i) => write!(f, "{}", i),
            NodeRef::Trigger(i) => write!(f, "trigger:{}", i),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum EdgeKind {
    Data,
    Trigger,
}

/// `from` depends on `to`, witnessed by `column`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct Edge {
    pub from: NodeRef,
    pub to: NodeRef,
    pub column: ColumnRef,
    pub kind: EdgeKind,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TriggerNode {
    pub idx: u64,
    pub name: String,
    pub interval: TriggerInterval,
    /// Body accesses; writes also contain the trigger definition itself.
    pub rw: RWSet,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DependencyGraph {
    pub window: (u64, u64),
    pub target: TargetSpec,
    /// Window queries with a non-empty write set (the target record excluded).
    pub nodes: BTreeMap<u64, RWSet>,
    pub triggers: Vec<TriggerNode>,
    /// Direct edges: each node points at the last earlier writer of every column it
    /// touches, plus trigger edges. Transitive dependencies are reachability.
    pub edges: Vec<Edge>,
    /// Tables alive at some point in the window, with their columns.
    pub tables: BTreeMap<String, BTreeSet<String>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum TableClass {
    Mutated,
    Consulted,
    Irrelevant,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ReplaySet {
    pub members: BTreeSet<u64>,
    /// Members that depend on the target through the graph.
    pub dependents: BTreeSet<u64>,
    /// Members that are trigger nodes.
    pub trigger_members: BTreeSet<u64>,
    pub influencers: BTreeSet<(u64, u64)>,
    pub classes: BTreeMap<String, TableClass>,
}

impl ReplaySet {
    pub fn tables_in(&self, class: TableClass) -> BTreeSet<String> {
        self.classes.iter().filter(|(_, c)| **c == class).map(|(t, _)| t.clone()).collect()
    }
}

fn accessed(rw: &RWSet) -> impl Iterator<Item = &ColumnRef> {
    rw.reads.iter().chain(rw.writes.iter())
}

/// Build the graph over the window records `queries` (ascending, with their sets
/// computed against the original catalog history).
pub fn build_graph(
    queries: &[(u64, RWSet)],
    hist: &CatalogHistory,
    window: (u64, u64),
    target: TargetSpec,
) -> Result<DependencyGraph, GraphError> {
    let (lo, hi) = window;
    let add = target.kind == TargetKind::Add;
    if lo == 0 || target.idx != lo || (lo > hi && !(add && lo == hi + 1)) {
        return Err(GraphError::WindowOutOfRange { lo, hi });
    }
    match target.kind {
        TargetKind::Add if target.new_rw.is_none() => return Err(GraphError::TargetKindMismatch(lo)),
        TargetKind::Remove | TargetKind::Change if target.old_rw.is_none() => {
            return Err(GraphError::TargetKindMismatch(lo))
        }
        TargetKind::Change if target.new_rw.is_none() => return Err(GraphError::TargetKindMismatch(lo)),
        _ => {}
    }

    let mut nodes = BTreeMap::new();
    for (i, rw) in queries {
        if *i < lo || *i > hi {
            return Err(GraphError::WindowOutOfRange { lo, hi });
        }
        if (*i == lo && !add) || rw.is_read_only() {
            continue;
        }
        nodes.insert(*i, rw.clone());
    }

    let mut tables: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    for (vi, cat) in hist.versions() {
        let next = hist.versions().iter().find(|(j, _)| j > vi).map(|(j, _)| *j);
        if *vi > hi || next.is_some_and(|n| n < lo) {
            continue;
        }
        for (t, s) in &cat.tables {
            tables.entry(t.clone()).or_default().extend(s.columns.iter().map(|c| c.name.clone()));
        }
    }

    let triggers: Vec<TriggerNode> = hist
        .trigger_intervals
        .iter()
        .filter(|(_, _, iv)| iv.create_idx <= hi && iv.drop_idx.is_none_or(|d| d > lo))
        .map(|(name, def, iv)| {
            let mut rw = trigger_body_rw(hist.as_of(iv.create_idx), def);
            rw.writes.insert(ColumnRef::trigger_def(name));
            TriggerNode { idx: iv.create_idx, name: name.clone(), interval: *iv, rw }
        })
        .collect();

    let mut edges = BTreeSet::new();
    let mut last: BTreeMap<ColumnRef, NodeRef> = BTreeMap::new();
    let trw = target.combined();
    for c in &trw.writes {
        last.insert(c.clone(), NodeRef::Target);
    }
    for (i, rw) in &nodes {
        let mut seen: BTreeMap<NodeRef, ColumnRef> = BTreeMap::new();
        for c in accessed(rw) {
            if let Some(m) = last.get(c) {
                seen.entry(*m).or_insert_with(|| c.clone());
            }
        }
        for (m, c) in seen {
            edges.insert(Edge { from: NodeRef::Query(*i), to: m, column: c, kind: EdgeKind::Data });
        }
        for c in &rw.writes {
            last.insert(c.clone(), NodeRef::Query(*i));
        }
    }

    // Trigger edges against every query committed while the trigger was alive.
    let mut pairs: Vec<(NodeRef, &RWSet, u64)> = nodes.iter().map(|(i, rw)| (NodeRef::Query(*i), rw, *i)).collect();
    pairs.push((NodeRef::Target, &trw, lo));
    for t in &triggers {
        let tn = NodeRef::Trigger(t.idx);
        for (k, rw, at) in &pairs {
            if !t.interval.alive_at(*at) {
                continue;
            }
            if let Some(c) = t.rw.writes.iter().find(|c| rw.accesses(c)) {
                edges.insert(Edge { from: *k, to: tn, column: c.clone(), kind: EdgeKind::Trigger });
            }
            let back = rw.writes.iter().find(|c| t.rw.accesses(c)).cloned().or_else(|| {
                rw.linked.contains(&t.name).then(|| ColumnRef::trigger_def(&t.name))
            });
            if let Some(c) = back {
                edges.insert(Edge { from: tn, to: *k, column: c, kind: EdgeKind::Trigger });
            }
        }
    }

    Ok(DependencyGraph { window, target, nodes, triggers, edges: edges.into_iter().collect(), tables })
}

impl DependencyGraph {
    pub fn rw_of(&self, n: NodeRef) -> Option<&RWSet> {
        match n {
            NodeRef::Target => None,
            NodeRef::Query(i) => self.nodes.get(&i),
            NodeRef::Trigger(i) => self.triggers.iter().find(|t| t.idx == i).map(|t| &t.rw),
        }
    }

    fn dependents_of(&self) -> BTreeMap<NodeRef, Vec<NodeRef>> {
        let mut m: BTreeMap<NodeRef, Vec<NodeRef>> = BTreeMap::new();
        for e in &self.edges {
            m.entry(e.to).or_default().push(e.from);
        }
        m
    }

    /// Nodes that transitively depend on any of `sources` (the sources themselves
    /// only when reached through another path).
    pub fn reaching(&self, sources: &BTreeSet<NodeRef>) -> BTreeSet<NodeRef> {
        let deps = self.dependents_of();
        let mut out = BTreeSet::new();
        let mut q: VecDeque<NodeRef> = sources.iter().copied().collect();
        while let Some(n) = q.pop_front() {
            for d in deps.get(&n).into_iter().flatten() {
                if out.insert(*d) {
                    q.push_back(*d);
                }
            }
        }
        out
    }

    /// Stable text dump: "n -> m [column]" per edge.
    pub fn dump(&self, rs: Option<&ReplaySet>) -> String {
        let mut s = String::new();
        let mut edges: Vec<&Edge> = self.edges.iter().collect();
        edges.sort_by_key(|a| (a.from, a.to));
        for e in edges {
            let _ = writeln!(s, "{} -> {} [{}]", e.from, e.to, e.column);
        }
        if let Some(rs) = rs {
            for (f, i) in &rs.influencers {
                let col = self
                    .edges
                    .iter()
                    .find(|e| e.from == NodeRef::Query(*i) && e.to == NodeRef::Query(*f))
                    .map(|e| format!("{}", e.column))
                    .unwrap_or_default();
                let _ = writeln!(s, "INFL {} ~> {} [{}]", f, i, col);
            }
        }
        s
    }
}

fn classify(g: &DependencyGraph, members: &BTreeSet<u64>, trig: &BTreeSet<u64>) -> BTreeMap<String, TableClass> {
    let mut mutated = BTreeSet::new();
    let mut read = BTreeSet::new();
    let mut sets: Vec<&RWSet> = Vec::new();
    for m in members {
        if trig.contains(m) {
            sets.extend(g.rw_of(NodeRef::Trigger(*m)));
        } else {
            sets.extend(g.nodes.get(m));
        }
    }
    let trw = g.target.combined();
    sets.push(&trw);
    for rw in sets {
        mutated.extend(rw.written_tables());
        read.extend(rw.accessed_tables());
    }
    let mut out = BTreeMap::new();
    for t in g.tables.keys().chain(mutated.iter()).chain(read.iter()) {
        if !g.tables.contains_key(t) {
            continue;
        }
        let c = if mutated.contains(t) {
            TableClass::Mutated
        } else if read.contains(t) {
            TableClass::Consulted
        } else {
            TableClass::Irrelevant
        };
        out.insert(t.clone(), c);
    }
    out
}

/// Least fixpoint of the dependency, trigger and influencer rules, closed under
/// co-writers: every window writer of a table the members or the target write.
pub fn replay_set(g: &DependencyGraph) -> ReplaySet {
    let lo = g.window.0;
    let mut sources: BTreeSet<NodeRef> = BTreeSet::new();
    sources.insert(NodeRef::Target);
    let mut influencers = BTreeSet::new();
    let prev: BTreeMap<u64, Vec<u64>> = {
        let mut m: BTreeMap<u64, Vec<u64>> = BTreeMap::new();
        for e in &g.edges {
            if let (NodeRef::Query(i), NodeRef::Query(f), EdgeKind::Data) = (e.from, e.to, e.kind) {
                m.entry(i).or_default().push(f);
            }
        }
        m
    };
    let (reached, dependents) = loop {
        let reached = g.reaching(&sources);
        let mut grew = false;
        for n in &reached {
            let NodeRef::Query(i) = n else { continue };
            for &f in prev.get(i).into_iter().flatten() {
                if f >= lo && f < *i && influencers.insert((f, *i)) && sources.insert(NodeRef::Query(f)) {
                    grew = true;
                }
            }
        }
        if !grew {
            let deps: BTreeSet<u64> = reached.iter().filter_map(|n| n.idx()).collect();
            break (reached, deps);
        }
    };

    let mut members: BTreeSet<u64> = BTreeSet::new();
    let mut trig = BTreeSet::new();
    for n in &reached {
        match n {
            NodeRef::Query(i) => {
                members.insert(*i);
            }
            NodeRef::Trigger(i) => {
                members.insert(*i);
                trig.insert(*i);
            }
            NodeRef::Target => {}
        }
    }
    // A trigger created inside the window is also an ordinary record.
    trig.retain(|i| !g.nodes.contains_key(i));

    let mut written: BTreeSet<String> = g.target.combined().written_tables();
    loop {
        for m in &members {
            if let Some(rw) = g.nodes.get(m) {
                written.extend(rw.written_tables());
            }
        }
        let extra: Vec<u64> = g
            .nodes
            .iter()
            .filter(|(i, rw)| !members.contains(i) && rw.written_tables().iter().any(|t| written.contains(t)))
            .map(|(i, _)| *i)
            .collect();
        if extra.is_empty() {
            break;
        }
        members.extend(extra);
    }

    let classes = classify(g, &members, &trig);
    ReplaySet { members, dependents, trigger_members: trig, influencers, classes }
}

/// Outcome of column pruning.
#[derive(Debug, Clone, PartialEq)]
pub struct Pruned {
    pub replay_set: ReplaySet,
    /// Columns still ignored after promotion.
    pub ignored: BTreeSet<ColumnRef>,
    pub dropped: BTreeSet<u64>,
}

/// Drop members that only write ignored columns, after promoting every ignored
/// column some member reads while writing an included column.
pub fn prune_ignored_columns(
    g: &DependencyGraph,
    rs: &ReplaySet,
    ignore: &BTreeSet<ColumnRef>,
) -> Result<Pruned, SqlError> {
    for c in ignore {
        if !g.tables.get(&c.table).is_some_and(|cols| cols.contains(&c.column)) {
            return Err(SqlError::UnresolvedName(format!("{}", c)));
        }
    }
    let rw_of = |m: &u64| -> Option<&RWSet> {
        if rs.trigger_members.contains(m) {
            g.rw_of(NodeRef::Trigger(*m))
        } else {
            g.nodes.get(m)
        }
    };
    let mut ignored = ignore.clone();
    loop {
        let mut promote = Vec::new();
        for m in &rs.members {
            let Some(rw) = rw_of(m) else { continue };
            if !rw.writes.iter().any(|w| !ignored.contains(w)) {
                continue;
            }
            promote.extend(rw.reads.iter().filter(|r| ignored.contains(r)).cloned());
        }
        if promote.is_empty() {
            break;
        }
        for p in promote {
            ignored.remove(&p);
        }
    }
    let dropped: BTreeSet<u64> = rs
        .members
        .iter()
        .filter(|m| rw_of(m).is_some_and(|rw| !rw.writes.is_empty() && rw.writes.iter().all(|w| ignored.contains(w))))
        .copied()
        .collect();
    let mut out = rs.clone();
    out.members.retain(|m| !dropped.contains(m));
    out.dependents.retain(|m| !dropped.contains(m));
    out.classes = classify(g, &out.members, &out.trigger_members);
    Ok(Pruned { replay_set: out, ignored, dropped })
}

/// Restrict a replay set to `keep` and recompute the table classes.
pub fn restrict(g: &DependencyGraph, rs: &ReplaySet, keep: &BTreeSet<u64>) -> ReplaySet {
    let mut out = rs.clone();
    out.members.retain(|m| keep.contains(m));
    out.dependents.retain(|m| keep.contains(m));
    out.trigger_members.retain(|m| keep.contains(m));
    out.classes = classify(g, &out.members, &out.trigger_members);
    out
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::catalog::Catalog;
    use crate::record::{build_log, QueryRecord, RawRecord};
    use crate::rw::extract_rw;

    pub(crate) const BANK: &[&str] = &[
        "CREATE TABLE Users (uid TEXT PRIMARY KEY, ssn TEXT)",
        "CREATE TABLE Accounts (aid INT PRIMARY KEY, uid TEXT REFERENCES Users(uid), balance INT)",
        "CREATE TABLE Transactions (sender INT REFERENCES Accounts(aid), receiver INT REFERENCES Accounts(aid), amount INT)",
        "CREATE TABLE Statements (aid INT, total INT)",
        "CREATE TRIGGER BalanceCheck BEFORE INSERT ON Transactions FOR EACH ROW BEGIN IF (SELECT balance FROM Accounts WHERE aid = NEW.sender) < NEW.amount THEN SIGNAL SQLSTATE '45000'; END IF; END",
        "INSERT INTO Users VALUES ('alice', '111')",
        "INSERT INTO Users VALUES ('bob', '222')",
        "INSERT INTO Accounts VALUES (1, 'alice', 100)",
        "INSERT INTO Accounts VALUES (2, 'bob', 0)",
        "BEGIN; INSERT INTO Transactions VALUES (1, 2, 100); UPDATE Accounts SET balance = balance - 100 WHERE aid = 1; UPDATE Accounts SET balance = balance + 100 WHERE aid = 2; COMMIT",
        "INSERT INTO Users VALUES ('charlie', '333')",
        "INSERT INTO Accounts VALUES (0003, 'charlie', 0)",
        "INSERT INTO Statements (aid, total) VALUES (1, (SELECT SUM(amount) FROM Transactions WHERE sender = 1))",
    ];

    fn log(stmts: &[&str]) -> (Vec<QueryRecord>, CatalogHistory, Vec<(u64, RWSet)>) {
        let raw = stmts
            .iter()
            .enumerate()
            .map(|(i, s)| RawRecord { line: i + 1, idx: i as u64 + 1, ts: 0, session: "s".into(), text: (*s).into(), nondet: Vec::new() })
            .collect();
        let (recs, hist) = build_log(raw, Catalog::default()).unwrap();
        let rws = recs
            .iter()
            .map(|r| (r.idx, extract_rw(&r.stmt, hist.as_of(r.idx - 1), r.idx).unwrap()))
            .collect();
        (recs, hist, rws)
    }

    fn remove(rws: &[(u64, RWSet)], hist: &CatalogHistory, tau: u64) -> DependencyGraph {
        let hi = rws.last().unwrap().0;
        let window: Vec<(u64, RWSet)> = rws.iter().filter(|(i, _)| *i >= tau).cloned().collect();
        let old = rws.iter().find(|(i, _)| *i == tau).map(|(_, r)| r.clone());
        let t = TargetSpec { kind: TargetKind::Remove, idx: tau, old_rw: old, new_rw: None };
        build_graph(&window, hist, (tau, hi), t).unwrap()
    }

    #[test]
    fn bank_remove_q10() {
        let (_, hist, rws) = log(BANK);
        let g = remove(&rws, &hist, 10);
        let rs = replay_set(&g);
        assert_eq!(rs.members, BTreeSet::from([5, 12, 13]));
        assert!(!g.edges.iter().any(|e| e.from == NodeRef::Query(11) && e.to == NodeRef::Target));
        assert_eq!(
            rs.tables_in(TableClass::Mutated),
            BTreeSet::from(["Accounts".into(), "Statements".into(), "Transactions".into()])
        );
        assert_eq!(rs.tables_in(TableClass::Consulted), BTreeSet::from(["Users".into()]));
        assert!(rs.tables_in(TableClass::Irrelevant).is_empty());
    }

    #[test]
    fn disjoint_inserts_have_no_edges() {
        let (_, hist, rws) =
            log(&["CREATE TABLE A (x INT)", "CREATE TABLE B (y INT)", "INSERT INTO A VALUES (1)", "INSERT INTO B VALUES (2)"]);
        let g = remove(&rws, &hist, 3);
        assert!(g.edges.iter().all(|e| e.from != NodeRef::Query(4)));
        let rs = replay_set(&g);
        assert!(rs.members.is_empty());
        assert_eq!(rs.classes["A"], TableClass::Mutated);
        assert_eq!(rs.classes["B"], TableClass::Irrelevant);
    }

    fn closure(rws: &[(u64, RWSet)]) -> BTreeSet<(u64, u64)> {
        let mut e = BTreeSet::new();
        for (n, rn) in rws {
            for (m, rm) in rws {
                if m < n && !rn.is_read_only() && rm.writes.iter().any(|c| rn.accesses(c)) {
                    e.insert((*n, *m));
                }
            }
        }
        loop {
            let mut add = Vec::new();
            for (a, b) in &e {
                for (c, d) in &e {
                    if b == c && !e.contains(&(*a, *d)) {
                        add.push((*a, *d));
                    }
                }
            }
            if add.is_empty() {
                return e;
            }
            e.extend(add);
        }
    }

    #[test]
    fn transitive_chain() {
        let (_, hist, rws) = log(&[
            "CREATE TABLE T (c INT)",
            "CREATE TABLE S (d INT)",
            "CREATE TABLE U (e INT)",
            "INSERT INTO T VALUES (1)",
            "INSERT INTO S (d) SELECT c FROM T",
            "INSERT INTO U (e) SELECT d FROM S",
        ]);
        let win: Vec<(u64, RWSet)> = rws.iter().filter(|(i, _)| *i >= 4).cloned().collect();
        let cl = closure(&win);
        assert!(cl.contains(&(6, 4)));
        let g = remove(&rws, &hist, 4);
        let reach = g.reaching(&BTreeSet::from([NodeRef::Target]));
        assert!(reach.contains(&NodeRef::Query(6)));
        // Reachability over direct edges equals the brute-force closure.
        for (n, _) in &win {
            for (m, _) in &win {
                let r = g.reaching(&BTreeSet::from([NodeRef::Query(*m)]));
                if m < n && *m != 4 {
                    assert_eq!(r.contains(&NodeRef::Query(*n)), cl.contains(&(*n, *m)), "{} {}", n, m);
                }
            }
        }
    }

    #[test]
    fn influencer_pulls_in_consulted_writer_dependents() {
        // 5 writes T.a (target). 6 writes U.c. 7 reads U.c and T.a: member with influencer 6.
        // 8 reads U.c: depends on the influencer, so joins.
        let (_, hist, rws) = log(&[
            "CREATE TABLE T (a INT)",
            "CREATE TABLE U (c INT)",
            "CREATE TABLE V (v INT)",
            "CREATE TABLE W (w INT)",
            "INSERT INTO T VALUES (1)",
            "INSERT INTO U VALUES (2)",
            "INSERT INTO V (v) SELECT a FROM T WHERE a < (SELECT c FROM U)",
            "INSERT INTO W (w) SELECT c FROM U",
        ]);
        let g = remove(&rws, &hist, 5);
        let rs = replay_set(&g);
        assert!(rs.influencers.contains(&(6, 7)));
        assert_eq!(rs.members, BTreeSet::from([7, 8]));
        assert_eq!(rs.classes["U"], TableClass::Consulted);
        assert!(g.dump(Some(&rs)).contains("INFL 6 ~> 7 [U."));
    }

    #[test]
    fn co_writers_join() {
        let (_, hist, rws) = log(&[
            "CREATE TABLE T (id INT PRIMARY KEY, a INT, b INT)",
            "INSERT INTO T VALUES (1, 0, 0)",
            "UPDATE T SET a = 5 WHERE id = 1",
            "UPDATE T SET b = 7 WHERE id = 1",
        ]);
        let g = remove(&rws, &hist, 3);
        let rs = replay_set(&g);
        assert!(rs.dependents.is_empty());
        assert_eq!(rs.members, BTreeSet::from([4]));
    }

    #[test]
    fn prune_drops_debug_only_writers() {
        let (_, hist, rws) = log(&[
            "CREATE TABLE T (id INT PRIMARY KEY, a INT, dbg TEXT)",
            "CREATE TABLE S (id INT PRIMARY KEY, b INT)",
            "INSERT INTO T VALUES (1, 0, 'x')",
            "UPDATE T SET a = 3 WHERE id = 1",
            "UPDATE T SET dbg = 'y' WHERE id = 1",
            "INSERT INTO S (id, b) SELECT id, a FROM T",
        ]);
        let g = remove(&rws, &hist, 4);
        let rs = replay_set(&g);
        assert_eq!(rs.members, BTreeSet::from([5, 6]));
        let none = prune_ignored_columns(&g, &rs, &BTreeSet::new()).unwrap();
        assert_eq!(none.replay_set, rs);
        let p = prune_ignored_columns(&g, &rs, &BTreeSet::from([ColumnRef::new("T", "dbg")])).unwrap();
        assert_eq!(p.dropped, BTreeSet::from([5]));
        assert_eq!(p.replay_set.members, BTreeSet::from([6]));
        assert!(prune_ignored_columns(&g, &rs, &BTreeSet::from([ColumnRef::new("T", "nope")])).is_err());
    }

    #[test]
    fn prune_promotes_read_columns() {
        let (_, hist, rws) = log(&[
            "CREATE TABLE T (id INT PRIMARY KEY, a INT)",
            "CREATE TABLE S (b INT)",
            "INSERT INTO T VALUES (1, 0)",
            "UPDATE T SET a = 3 WHERE id = 1",
            "INSERT INTO S (b) SELECT a FROM T",
        ]);
        let g = remove(&rws, &hist, 4);
        let rs = replay_set(&g);
        let p = prune_ignored_columns(&g, &rs, &BTreeSet::from([ColumnRef::new("T", "a")])).unwrap();
        assert!(p.ignored.is_empty());
        assert!(p.dropped.is_empty());
    }

    #[test]
    fn window_errors() {
        let (_, hist, rws) = log(&["CREATE TABLE A (x INT)", "INSERT INTO A VALUES (1)"]);
        let t = TargetSpec { kind: TargetKind::Remove, idx: 5, old_rw: None, new_rw: None };
        assert_eq!(build_graph(&[], &hist, (5, 2), t), Err(GraphError::WindowOutOfRange { lo: 5, hi: 2 }));
        let t = TargetSpec { kind: TargetKind::Remove, idx: 2, old_rw: None, new_rw: None };
        assert_eq!(build_graph(&rws[1..], &hist, (2, 2), t), Err(GraphError::TargetKindMismatch(2)));
    }
}
