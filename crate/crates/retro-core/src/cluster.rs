//! Row-wise clustering: cluster-key columns, per-query key sets and partitions.
//!
//! A scheme picks origin key columns. Every column whose value is (or maps to) an
//! origin key value is a *bearer*: the key column itself, columns referencing a
//! bearer (declared foreign keys or operator hints), and alias columns (the
//! single-column primary key of a table with exactly one independent bearer),
//! whose values are translated through an [`AliasMap`].

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec::Vec;
use core::cmp::Ordering;

use crate::catalog::{Catalog, CatalogHistory, TableSchema};
use crate::graph::{DependencyGraph, NodeRef, ReplaySet};
use crate::record::QueryRecord;
use crate::rw::{ColumnRef, RWSet};
use crate::sql::*;
use crate::value::{ScalarType, Value};

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub enum Key {
    Point(ColumnRef, Value),
    /// Inclusive range on an origin column.
    Range(ColumnRef, Value, Value),
    /// Every row of a table the scheme does not cover.
    Table(String),
}

fn le(a: &Value, b: &Value) -> bool {
    // Incomparable values are treated as overlapping.
    a.sql_cmp(b).is_none_or(|o| o != Ordering::Greater)
}

impl Key {
    pub fn meets(&self, o: &Key) -> bool {
        match (self, o) {
            (Key::Point(a, x), Key::Point(b, y)) => a == b && x == y,
            (Key::Point(a, x), Key::Range(b, lo, hi)) | (Key::Range(b, lo, hi), Key::Point(a, x)) => {
                a == b && le(lo, x) && le(x, hi)
            }
            (Key::Range(a, l1, h1), Key::Range(b, l2, h2)) => a == b && le(l1, h2) && le(l2, h1),
            (Key::Table(a), Key::Table(b)) => a == b,
            _ => false,
        }
    }

    pub fn render(&self) -> String {
        match self {
            Key::Point(c, v) => format!("{}={}", c, v.to_sql()),
            Key::Range(c, lo, hi) => format!("{}=[{},{}]", c, lo.to_sql(), hi.to_sql()),
            Key::Table(t) => format!("{}.*", t),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ClusterKeySet {
    /// Could touch any row.
    Universal,
    Keys(BTreeSet<Key>),
    /// Definitions (DDL, triggers, procedures): the union over the queries that use
    /// them, resolved during partitioning.
    Deferred,
}

impl Default for ClusterKeySet {
    fn default() -> Self {
        ClusterKeySet::Keys(BTreeSet::new())
    }
}

impl ClusterKeySet {
    pub fn is_universal(&self) -> bool {
        matches!(self, ClusterKeySet::Universal)
    }

    pub fn intersects(&self, o: &ClusterKeySet) -> bool {
        match (self, o) {
            (ClusterKeySet::Deferred, _) | (_, ClusterKeySet::Deferred) => false,
            (ClusterKeySet::Universal, _) | (_, ClusterKeySet::Universal) => true,
            (ClusterKeySet::Keys(a), ClusterKeySet::Keys(b)) => a.iter().any(|x| b.iter().any(|y| x.meets(y))),
        }
    }

    pub fn union_with(&mut self, o: &ClusterKeySet) {
        match (&mut *self, o) {
            (ClusterKeySet::Universal, _) | (_, ClusterKeySet::Deferred) => {}
            (_, ClusterKeySet::Universal) => *self = ClusterKeySet::Universal,
            (ClusterKeySet::Deferred, k) => *self = k.clone(),
            (ClusterKeySet::Keys(a), ClusterKeySet::Keys(b)) => a.extend(b.iter().cloned()),
        }
    }

    /// Squared size for the choice rule; table-wide keys count as `n` points.
    pub fn weight(&self, n: u128) -> Option<u128> {
        match self {
            ClusterKeySet::Universal => None,
            ClusterKeySet::Deferred => Some(0),
            ClusterKeySet::Keys(k) => {
                let w: u128 = k.iter().map(|x| if matches!(x, Key::Table(_)) { n } else { 1 }).sum();
                Some(w * w)
            }
        }
    }

    /// Sidecar form: `None` for Universal.
    pub fn render(&self) -> Option<Vec<String>> {
        match self {
            ClusterKeySet::Universal => None,
            ClusterKeySet::Deferred => Some(Vec::new()),
            ClusterKeySet::Keys(k) => Some(k.iter().map(Key::render).collect()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum BearerKind {
    Key,
    Foreign,
    Alias,
    AliasForeign,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Bearer {
    pub column: ColumnRef,
    pub origin: ColumnRef,
    pub kind: BearerKind,
    /// Alias column whose map translates this column's values.
    pub via: Option<ColumnRef>,
    /// Column this one was derived from.
    pub from: Option<ColumnRef>,
}

impl Bearer {
    fn independent(&self) -> bool {
        self.kind != BearerKind::Alias
    }
}

/// Tables and value links visible over a window, merged across catalog versions.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SchemaUnion {
    pub tables: BTreeMap<String, Arc<TableSchema>>,
    /// (referencing column, referenced column), declared or hinted.
    pub links: BTreeSet<(ColumnRef, ColumnRef)>,
}

impl SchemaUnion {
    pub fn from_history(hist: &CatalogHistory, window: (u64, u64), hints: &[(ColumnRef, ColumnRef)]) -> Self {
        let mut su = SchemaUnion::default();
        let vs = hist.versions();
        for (k, (vi, cat)) in vs.iter().enumerate() {
            let next = vs.get(k + 1).map(|(j, _)| *j);
            if *vi > window.1 || next.is_some_and(|n| n < window.0) {
                continue;
            }
            for (t, s) in &cat.tables {
                su.tables.insert(t.clone(), s.clone());
                for fk in &s.foreign_keys {
                    su.links.insert((ColumnRef::new(t, &fk.column), ColumnRef::new(&fk.ref_table, &fk.ref_column)));
                }
            }
        }
        su.links.extend(hints.iter().cloned());
        su
    }

    fn has_column(&self, c: &ColumnRef) -> bool {
        self.tables.get(&c.table).is_some_and(|s| s.col_index(&c.column).is_some())
    }

    fn column_type(&self, c: &ColumnRef) -> Option<ScalarType> {
        let s = self.tables.get(&c.table)?;
        s.col_index(&c.column).map(|i| s.columns[i].ty)
    }

    /// Candidate key columns: single-column primary keys and link targets.
    pub fn candidates(&self) -> BTreeSet<ColumnRef> {
        let mut out = BTreeSet::new();
        for (t, s) in &self.tables {
            if s.primary_key.len() == 1 {
                out.insert(ColumnRef::new(t, &s.columns[s.primary_key[0]].name));
            }
        }
        for (_, to) in &self.links {
            if self.has_column(to) {
                out.insert(to.clone());
            }
        }
        out
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ClusterScheme {
    pub keys: Vec<ColumnRef>,
    pub bearers: BTreeMap<ColumnRef, Bearer>,
    types: BTreeMap<ColumnRef, ScalarType>,
}

impl ClusterScheme {
    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    fn derive_once(keys: &[ColumnRef], su: &SchemaUnion, demoted: &BTreeSet<ColumnRef>) -> ClusterScheme {
        let mut bearers: BTreeMap<ColumnRef, Bearer> = BTreeMap::new();
        for k in keys {
            if su.has_column(k) {
                bearers.insert(k.clone(), Bearer { column: k.clone(), origin: k.clone(), kind: BearerKind::Key, via: None, from: None });
            }
        }
        loop {
            let mut changed = false;
            for (from, to) in &su.links {
                if bearers.contains_key(from) || !su.has_column(from) {
                    continue;
                }
                let Some(b) = bearers.get(to) else { continue };
                let (kind, via) = match b.kind {
                    BearerKind::Key | BearerKind::Foreign => (BearerKind::Foreign, None),
                    BearerKind::Alias => (BearerKind::AliasForeign, Some(to.clone())),
                    BearerKind::AliasForeign => (BearerKind::AliasForeign, b.via.clone()),
                };
                let nb = Bearer { column: from.clone(), origin: b.origin.clone(), kind, via, from: Some(to.clone()) };
                bearers.insert(from.clone(), nb);
                changed = true;
            }
            for (t, s) in &su.tables {
                if s.primary_key.len() != 1 {
                    continue;
                }
                let p = ColumnRef::new(t, &s.columns[s.primary_key[0]].name);
                if bearers.contains_key(&p) || demoted.contains(&p) {
                    continue;
                }
                let indep: Vec<&Bearer> = bearers.values().filter(|b| &b.column.table == t && b.independent()).collect();
                if indep.len() == 1 {
                    let origin = indep[0].origin.clone();
                    let from = indep[0].column.clone();
                    bearers.insert(p.clone(), Bearer { column: p.clone(), origin, kind: BearerKind::Alias, via: Some(p), from: Some(from) });
                    changed = true;
                }
            }
            if !changed {
                break;
            }
        }
        let mut types = BTreeMap::new();
        for b in bearers.values() {
            for c in [&b.column, &b.origin] {
                if let Some(ty) = su.column_type(c) {
                    types.insert(c.clone(), ty);
                }
            }
        }
        ClusterScheme { keys: keys.to_vec(), bearers, types }
    }

    /// Derive bearers for `keys`. Aliases in tables that end up with more than one
    /// independent bearer are dropped, as are the `demoted` ones.
    pub fn derive(keys: &[ColumnRef], su: &SchemaUnion, demoted: &BTreeSet<ColumnRef>) -> ClusterScheme {
        let mut demoted = demoted.clone();
        loop {
            let s = ClusterScheme::derive_once(keys, su, &demoted);
            let bad: Vec<ColumnRef> = s
                .bearers
                .values()
                .filter(|b| b.kind == BearerKind::Alias && s.independent(&b.column.table).len() != 1)
                .map(|b| b.column.clone())
                .collect();
            if bad.is_empty() {
                return s;
            }
            demoted.extend(bad);
        }
    }

    pub fn bearers_of(&self, table: &str) -> Vec<&Bearer> {
        self.bearers.values().filter(|b| b.column.table == table).collect()
    }

    fn independent(&self, table: &str) -> Vec<&Bearer> {
        self.bearers.values().filter(|b| b.column.table == table && b.independent()).collect()
    }

    pub fn alias_columns(&self) -> impl Iterator<Item = &Bearer> {
        self.bearers.values().filter(|b| b.kind == BearerKind::Alias)
    }

    /// Text dump: "KEY t.c", "FOREIGN a.b <- key", "ALIAS a.c ~ a.b".
    pub fn dump(&self) -> String {
        let mut s = String::new();
        for k in &self.keys {
            s.push_str(&format!("KEY {}\n", k));
        }
        for b in self.bearers.values() {
            match b.kind {
                BearerKind::Key => {}
                BearerKind::Foreign | BearerKind::AliasForeign => {
                    s.push_str(&format!("FOREIGN {} <- {}\n", b.column, b.from.as_ref().unwrap_or(&b.origin)))
                }
                BearerKind::Alias => s.push_str(&format!("ALIAS {} ~ {}\n", b.column, b.from.as_ref().unwrap_or(&b.origin))),
            }
        }
        s
    }
}

/// Alias value -> (bearer column of the row, bearer value), from literal inserts.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AliasMap {
    pub map: BTreeMap<ColumnRef, BTreeMap<Value, (ColumnRef, Value)>>,
    pub demoted: BTreeSet<ColumnRef>,
}

impl AliasMap {
    fn record(&mut self, alias: &ColumnRef, v: Value, bearer: ColumnRef, bv: Value) {
        if self.demoted.contains(alias) {
            return;
        }
        let m = self.map.entry(alias.clone()).or_default();
        match m.get(&v) {
            Some(old) if old != &(bearer.clone(), bv.clone()) => {
                self.demote(alias);
            }
            Some(_) => {}
            None => {
                m.insert(v, (bearer, bv));
            }
        }
    }

    fn demote(&mut self, alias: &ColumnRef) {
        self.demoted.insert(alias.clone());
        self.map.remove(alias);
    }

    /// Origin key value of an alias value.
    pub fn resolve(&self, scheme: &ClusterScheme, alias: &ColumnRef, v: &Value) -> Option<Value> {
        let mut cur = (alias.clone(), v.clone());
        for _ in 0..16 {
            let (b, bv) = self.map.get(&cur.0)?.get(&cur.1)?;
            let bearer = scheme.bearers.get(b)?;
            match bearer.kind {
                BearerKind::Key | BearerKind::Foreign => {
                    return bv.coerce(*scheme.types.get(&bearer.origin)?).filter(|x| !x.is_null())
                }
                BearerKind::AliasForeign => cur = (bearer.via.clone()?, bv.clone()),
                BearerKind::Alias => return None,
            }
        }
        None
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Bound {
    Lit(Value),
    /// A value of the row firing the trigger, on a bearer of this origin.
    Row(ColumnRef),
    Unknown,
}

type Env = BTreeMap<String, Bound>;

#[derive(Debug, Clone, PartialEq)]
enum Pin {
    Point(Value),
    Range(Value, Value),
    Row(ColumnRef),
}

fn bound_of(e: &Expr, env: &Env, row: Option<&Bearers<'_>>) -> Bound {
    match e {
        Expr::Lit(v) => Bound::Lit(v.clone()),
        Expr::Var(n) => env.get(n).cloned().unwrap_or(Bound::Unknown),
        Expr::Row(_, c) => row.and_then(|r| r.origin_of(c)).map(Bound::Row).unwrap_or(Bound::Unknown),
        Expr::Neg(x) => match &**x {
            Expr::Lit(Value::Int(i)) => i.checked_neg().map(|n| Bound::Lit(Value::Int(n))).unwrap_or(Bound::Unknown),
            _ => Bound::Unknown,
        },
        _ => Bound::Unknown,
    }
}

/// Bearers of the table firing the current trigger.
struct Bearers<'a> {
    scheme: &'a ClusterScheme,
    table: &'a str,
}

impl Bearers<'_> {
    fn origin_of(&self, col: &str) -> Option<ColumnRef> {
        self.scheme.bearers.get(&ColumnRef::new(self.table, col)).map(|b| b.origin.clone())
    }
}

fn col_of<'e>(e: &'e Expr, table: &str) -> Option<&'e str> {
    match e {
        Expr::Col(c) if c.table.as_deref() == Some(table) => Some(&c.column),
        _ => None,
    }
}

/// Pins a predicate places on columns of `table`: every row satisfying `e` has a
/// value in the pin list of each returned column.
fn pins(e: &Expr, table: &str, env: &Env, row: Option<&Bearers<'_>>) -> BTreeMap<String, Vec<Pin>> {
    let as_pin = |x: &Expr| match bound_of(x, env, row) {
        Bound::Lit(v) => Some(Pin::Point(v)),
        Bound::Row(o) => Some(Pin::Row(o)),
        Bound::Unknown => None,
    };
    let mut out = BTreeMap::new();
    match e {
        Expr::Bin(BinOp::And, a, b) => {
            out = pins(a, table, env, row);
            for (c, p) in pins(b, table, env, row) {
                out.entry(c).or_insert(p);
            }
        }
        Expr::Bin(BinOp::Or, a, b) => {
            let l = pins(a, table, env, row);
            let mut r = pins(b, table, env, row);
            for (c, mut p) in l {
                if let Some(q) = r.remove(&c) {
                    p.extend(q);
                    out.insert(c, p);
                }
            }
        }
        Expr::Bin(BinOp::Eq, a, b) => {
            let (c, v) = match (col_of(a, table), col_of(b, table)) {
                (Some(c), None) => (c, b),
                (None, Some(c)) => (c, a),
                _ => return out,
            };
            if let Some(p) = as_pin(v) {
                out.insert(c.into(), alloc::vec![p]);
            }
        }
        Expr::InList(x, list) => {
            if let Some(c) = col_of(x, table) {
                let ps: Option<Vec<Pin>> = list.iter().map(as_pin).collect();
                if let Some(ps) = ps {
                    out.insert(c.into(), ps);
                }
            }
        }
        Expr::Between(x, lo, hi) => {
            if let (Some(c), Bound::Lit(l), Bound::Lit(h)) = (col_of(x, table), bound_of(lo, env, row), bound_of(hi, env, row)) {
                out.insert(c.into(), alloc::vec![Pin::Range(l, h)]);
            }
        }
        _ => {}
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KOptions {
    /// AUTO_INCREMENT ids are preserved across retroactive replay.
    pub tombstone: bool,
}

struct KWalk<'a> {
    scheme: &'a ClusterScheme,
    aliases: &'a AliasMap,
    cat: &'a Catalog,
    opts: KOptions,
    keys: BTreeSet<Key>,
    universal: bool,
    stack: Vec<String>,
}

impl<'a> KWalk<'a> {
    fn table_key(&mut self, t: &str) {
        self.keys.insert(Key::Table(t.into()));
    }

    /// Atoms for one pin on a bearer; `false` when it cannot be pinned.
    fn translate(&mut self, b: &Bearer, p: &Pin) -> bool {
        let Some(ty) = self.scheme.types.get(&b.column).copied() else { return false };
        let Some(oty) = self.scheme.types.get(&b.origin).copied() else { return false };
        match (p, b.kind) {
            (Pin::Row(o), _) => o == &b.origin,
            (Pin::Point(v), BearerKind::Key | BearerKind::Foreign) => {
                match v.coerce(ty).and_then(|x| x.coerce(oty)) {
                    Some(x) if !x.is_null() => {
                        self.keys.insert(Key::Point(b.origin.clone(), x));
                        true
                    }
                    _ => false,
                }
            }
            (Pin::Range(lo, hi), BearerKind::Key | BearerKind::Foreign) => {
                match (lo.coerce(oty), hi.coerce(oty)) {
                    (Some(l), Some(h)) if !l.is_null() && !h.is_null() => {
                        self.keys.insert(Key::Range(b.origin.clone(), l, h));
                        true
                    }
                    _ => false,
                }
            }
            (Pin::Point(v), BearerKind::Alias | BearerKind::AliasForeign) => {
                let Some(via) = &b.via else { return false };
                let Some(vty) = self.scheme.types.get(via).copied() else { return false };
                let Some(x) = v.coerce(ty).and_then(|x| x.coerce(vty)) else { return false };
                match self.aliases.resolve(self.scheme, via, &x) {
                    Some(k) => {
                        self.keys.insert(Key::Point(b.origin.clone(), k));
                        true
                    }
                    None => false,
                }
            }
            (Pin::Range(..), _) => false,
        }
    }

    fn translate_all(&mut self, b: &Bearer, ps: &[Pin]) -> bool {
        let saved = self.keys.clone();
        for p in ps {
            if !self.translate(b, p) {
                self.keys = saved;
                return false;
            }
        }
        true
    }

    /// Rows of `t` selected by `filter`. Writers of tables with several independent
    /// bearers must pin all of them; everyone else needs one.
    fn access(&mut self, t: &str, filter: Option<&Expr>, env: &Env, row: Option<&Bearers<'_>>, write: bool) {
        if let Some(v) = self.cat.views.get(t).cloned() {
            let mut bases: Vec<String> = v.query.sources().iter().map(|s| String::from(*s)).collect();
            let mut seen = BTreeSet::new();
            while let Some(b) = bases.pop() {
                if !seen.insert(b.clone()) {
                    continue;
                }
                if let Some(inner) = self.cat.views.get(&b) {
                    bases.extend(inner.query.sources().iter().map(|s| String::from(*s)));
                } else if self.scheme.bearers_of(&b).is_empty() {
                    self.table_key(&b);
                } else {
                    self.universal = true;
                }
            }
            return;
        }
        let bearers: Vec<Bearer> = self.scheme.bearers_of(t).into_iter().cloned().collect();
        if bearers.is_empty() {
            self.table_key(t);
            return;
        }
        let pins = filter.map(|f| pins(f, t, env, row)).unwrap_or_default();
        let indep: Vec<&Bearer> = bearers.iter().filter(|b| b.independent()).collect();
        if write && indep.len() > 1 {
            for b in indep {
                let ok = pins.get(&b.column.column).is_some_and(|ps| self.translate_all(b, ps));
                if !ok {
                    self.universal = true;
                    return;
                }
            }
            return;
        }
        for b in &bearers {
            if let Some(ps) = pins.get(&b.column.column) {
                if self.translate_all(b, ps) {
                    return;
                }
            }
        }
        self.universal = true;
    }

    fn subqueries(&mut self, e: &Expr, env: &Env, row: Option<&Bearers<'_>>) {
        let mut subs: Vec<&Select> = Vec::new();
        e.walk(&mut |x| {
            if let Expr::Subquery(q) = x {
                subs.push(q);
            }
        });
        for q in subs {
            self.select(q, env, row);
        }
    }

    fn select(&mut self, q: &Select, env: &Env, row: Option<&Bearers<'_>>) {
        for it in &q.items {
            if let SelectItem::Expr(e, _) = it {
                self.subqueries(e, env, row);
            }
        }
        if let Some(f) = &q.filter {
            self.subqueries(f, env, row);
        }
        for (e, _) in &q.order_by {
            self.subqueries(e, env, row);
        }
        let sources = q.sources();
        // Equalities on joined bearers of one origin carry a pin across.
        let mut pinned: BTreeSet<&str> = BTreeSet::new();
        for s in &sources {
            let before = (self.keys.len(), self.universal);
            let saved = self.keys.clone();
            self.access(s, q.filter.as_ref(), env, row, false);
            if self.universal && !before.1 {
                self.universal = false;
                self.keys = saved;
            } else {
                pinned.insert(s);
            }
        }
        loop {
            let mut grew = false;
            for j in &q.joins {
                for (a, b) in [(&j.left, &j.right), (&j.right, &j.left)] {
                    let (Some(ta), Some(tb)) = (a.table.as_deref(), b.table.as_deref()) else { continue };
                    if !pinned.contains(ta) || pinned.contains(tb) {
                        continue;
                    }
                    let ba = self.scheme.bearers.get(&ColumnRef::new(ta, &a.column));
                    let bb = self.scheme.bearers.get(&ColumnRef::new(tb, &b.column));
                    if let (Some(ba), Some(bb)) = (ba, bb) {
                        let single = self.scheme.independent(ta).len() <= 1;
                        if ba.origin == bb.origin && single && !self.scheme.bearers_of(ta).is_empty() {
                            pinned.insert(tb);
                            grew = true;
                        }
                    }
                }
            }
            if !grew {
                break;
            }
        }
        if sources.iter().any(|s| !pinned.contains(s)) {
            self.universal = true;
        }
    }

    fn fire(&mut self, table: &str, ev: Event) {
        let trigs: Vec<_> = self.cat.triggers.values().filter(|t| t.table == table && t.event == ev).cloned().collect();
        for t in trigs {
            let key = format!("#trigger:{}", t.name);
            if self.stack.contains(&key) {
                continue;
            }
            self.stack.push(key);
            let rb = Bearers { scheme: self.scheme, table };
            self.body(&t.body, &mut Env::new(), Some(&rb));
            self.stack.pop();
        }
    }

    fn body(&mut self, b: &[BodyStmt], env: &mut Env, row: Option<&Bearers<'_>>) {
        for s in b {
            match s {
                BodyStmt::Declare(n, _) => {
                    env.insert(n.clone(), Bound::Unknown);
                }
                BodyStmt::Set(n, e) => {
                    self.subqueries(e, env, row);
                    env.insert(n.clone(), Bound::Unknown);
                }
                BodyStmt::Signal(_) => {}
                BodyStmt::Query(q) => {
                    self.stmt(q, env, row);
                    if let Statement::Select(sel) = q {
                        for v in &sel.into {
                            env.insert(v.clone(), Bound::Unknown);
                        }
                    }
                }
                BodyStmt::If(branches, els) => {
                    for (c, blk) in branches {
                        self.subqueries(c, env, row);
                        self.body(blk, env, row);
                    }
                    self.body(els, env, row);
                }
            }
        }
    }

    /// Children touched when rows of `t` lose (or change) referenced values.
    fn children(&mut self, t: &str, cols: &[String], delete: bool) {
        for (child, fk) in self.cat.referencing(t) {
            if !cols.contains(&fk.ref_column) {
                continue;
            }
            let cascade = delete && fk.on_delete == FkAction::Cascade;
            let parent = self.scheme.bearers.get(&ColumnRef::new(t, &fk.ref_column)).map(|b| b.origin.clone());
            let link = self.scheme.bearers.get(&ColumnRef::new(&child, &fk.column)).map(|b| b.origin.clone());
            let covered = parent.is_some() && parent == link;
            let child_bearers = self.scheme.bearers_of(&child).len();
            if covered && (!cascade || self.scheme.independent(&child).len() <= 1) {
                if cascade {
                    let key = format!("#cascade:{}", child);
                    if !self.stack.contains(&key) {
                        self.stack.push(key);
                        let all: Vec<String> = self.cat.tables.get(&child).map(|s| s.column_names().map(String::from).collect()).unwrap_or_default();
                        self.children(&child, &all, true);
                        self.stack.pop();
                    }
                }
                continue;
            }
            if child_bearers > 0 {
                self.universal = true;
                return;
            }
            self.table_key(&child);
            if cascade {
                let key = format!("#cascade:{}", child);
                if !self.stack.contains(&key) {
                    self.stack.push(key);
                    let all: Vec<String> = self.cat.tables.get(&child).map(|s| s.column_names().map(String::from).collect()).unwrap_or_default();
                    self.children(&child, &all, true);
                    self.stack.pop();
                }
            }
        }
    }

    /// Parent row read by a foreign-key check on `t.col` with value `v`.
    fn parent_read(&mut self, t: &str, col: &str, v: &Bound, row: Option<&Bearers<'_>>) {
        let Some(s) = self.cat.tables.get(t).cloned() else { return };
        for fk in s.foreign_keys.iter().filter(|f| f.column == col) {
            if matches!(v, Bound::Lit(Value::Null)) {
                continue;
            }
            let filter = match v {
                Bound::Lit(x) => Some(Expr::bin(BinOp::Eq, Expr::col(&fk.ref_table, &fk.ref_column), Expr::Lit(x.clone()))),
                Bound::Row(_) => None,
                Bound::Unknown => None,
            };
            if let Bound::Row(o) = v {
                let pb = self.scheme.bearers.get(&ColumnRef::new(&fk.ref_table, &fk.ref_column));
                if pb.is_some_and(|b| &b.origin == o) {
                    continue;
                }
            }
            self.access(&fk.ref_table, filter.as_ref(), &Env::new(), row, false);
        }
    }

    fn insert(&mut self, ins: &Insert, env: &Env, row: Option<&Bearers<'_>>) {
        let t = ins.table.as_str();
        let Some(schema) = self.cat.tables.get(t).cloned() else {
            // Inserting through a view is rejected by the executor.
            self.table_key(t);
            return;
        };
        let names: Vec<String> = match &ins.columns {
            Some(c) => c.clone(),
            None => schema.column_names().map(String::from).collect(),
        };
        let rows: Vec<Vec<Bound>> = match &ins.source {
            InsertSource::Values(rs) => {
                for r in rs {
                    for e in r {
                        self.subqueries(e, env, row);
                    }
                }
                rs.iter().map(|r| r.iter().map(|e| bound_of(e, env, row)).collect()).collect()
            }
            InsertSource::Select(q) => {
                self.select(q, env, row);
                alloc::vec![alloc::vec![Bound::Unknown; names.len()]]
            }
        };
        let bearers: Vec<Bearer> = self.scheme.bearers_of(t).into_iter().cloned().collect();
        let auto = schema.auto_increment_column().map(|i| schema.columns[i].name.clone());
        for r in &rows {
            let value_of = |c: &str| -> Bound {
                match names.iter().position(|n| n == c) {
                    Some(i) => r.get(i).cloned().unwrap_or(Bound::Unknown),
                    None => {
                        let d = schema.col_index(c).and_then(|i| schema.columns[i].default.clone());
                        Bound::Lit(d.unwrap_or(Value::Null))
                    }
                }
            };
            let generated = auto.as_deref().is_some_and(|a| matches!(value_of(a), Bound::Lit(Value::Null)));
            if bearers.is_empty() {
                self.table_key(t);
            } else {
                for b in bearers.iter().filter(|b| b.independent()) {
                    let ok = match value_of(&b.column.column) {
                        Bound::Lit(v) => self.translate(b, &Pin::Point(v)),
                        Bound::Row(o) => o == b.origin,
                        Bound::Unknown => false,
                    };
                    if !ok {
                        self.universal = true;
                        return;
                    }
                }
                // Key uniqueness is checked against all rows: safe only when the key
                // holds a bearer, or ids come from the preserved counter.
                let pk_bearer = schema.primary_key.iter().any(|&i| bearers.iter().any(|b| b.column.column == schema.columns[i].name));
                let pk_auto = generated && self.opts.tombstone && schema.primary_key.len() == 1 && auto.as_deref() == Some(schema.columns[schema.primary_key[0]].name.as_str());
                if !(schema.primary_key.is_empty() || pk_bearer || pk_auto) {
                    self.universal = true;
                    return;
                }
                if generated && !self.opts.tombstone {
                    self.universal = true;
                    return;
                }
            }
            if generated && !self.opts.tombstone {
                // Off-mode ids depend on every earlier insert into the table.
                self.table_key(t);
            }
            for fk in &schema.foreign_keys {
                let v = value_of(&fk.column);
                let covered = matches!((&v, self.scheme.bearers.get(&ColumnRef::new(t, &fk.column))), (Bound::Lit(_), Some(_)));
                if !covered {
                    self.parent_read(t, &fk.column, &v, row);
                }
            }
        }
        self.fire(t, Event::Insert);
    }

    fn stmt(&mut self, s: &Statement, env: &Env, row: Option<&Bearers<'_>>) {
        match s {
            Statement::Select(q) => self.select(q, env, row),
            Statement::Insert(ins) => self.insert(ins, env, row),
            Statement::Update(u) => {
                let t = u.table.as_str();
                for (_, e) in &u.sets {
                    self.subqueries(e, env, row);
                }
                if let Some(f) = &u.filter {
                    self.subqueries(f, env, row);
                }
                let schema = self.cat.tables.get(t).cloned();
                for (c, e) in &u.sets {
                    let cr = ColumnRef::new(t, c);
                    let is_pk = schema.as_ref().is_some_and(|s| s.is_pk_column(c));
                    let referenced = self.cat.referencing(t).iter().any(|(_, fk)| &fk.ref_column == c);
                    if self.scheme.bearers.contains_key(&cr) || is_pk || referenced {
                        self.universal = true;
                        return;
                    }
                    if schema.as_ref().is_some_and(|s| s.foreign_keys.iter().any(|f| &f.column == c)) {
                        let v = bound_of(e, env, row);
                        self.parent_read(t, c, &v, row);
                    }
                }
                self.access(t, u.filter.as_ref(), env, row, true);
                self.fire(t, Event::Update);
            }
            Statement::Delete(d) => {
                if let Some(f) = &d.filter {
                    self.subqueries(f, env, row);
                }
                let t = d.table.as_str();
                self.access(t, d.filter.as_ref(), env, row, true);
                let all: Vec<String> = self.cat.tables.get(t).map(|s| s.column_names().map(String::from).collect()).unwrap_or_default();
                self.children(t, &all, true);
                self.fire(t, Event::Delete);
            }
            Statement::TruncateTable(t) => self.access(t, None, env, row, true),
            Statement::TransactionBlock(v) => {
                for x in v {
                    self.stmt(x, env, row);
                }
            }
            Statement::CallProcedure(p, args) => {
                for a in args {
                    self.subqueries(a, env, row);
                }
                let key = format!("#proc:{}", p);
                let Some(def) = self.cat.procedures.get(p).cloned() else { return };
                if self.stack.contains(&key) {
                    return;
                }
                let assigned = assigned_vars(&def.body);
                let mut inner = Env::new();
                for (i, (name, _)) in def.params.iter().enumerate() {
                    let b = match args.get(i) {
                        Some(a) if !assigned.contains(name) => bound_of(a, env, row),
                        _ => Bound::Unknown,
                    };
                    inner.insert(name.clone(), b);
                }
                self.stack.push(key);
                self.body(&def.body, &mut inner, row);
                self.stack.pop();
            }
            Statement::CreateTable(_)
            | Statement::AlterTable(..)
            | Statement::DropTable(_)
            | Statement::CreateView { .. }
            | Statement::DropView(_)
            | Statement::CreateTrigger(_)
            | Statement::DropTrigger(_)
            | Statement::CreateProcedure(_) => {}
        }
    }
}

fn assigned_vars(b: &[BodyStmt]) -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    for s in b {
        match s {
            BodyStmt::Set(n, _) | BodyStmt::Declare(n, _) => {
                out.insert(n.clone());
            }
            BodyStmt::Query(Statement::Select(q)) => out.extend(q.into.iter().cloned()),
            BodyStmt::If(br, els) => {
                for (_, blk) in br {
                    out.extend(assigned_vars(blk));
                }
                out.extend(assigned_vars(els));
            }
            _ => {}
        }
    }
    out
}

fn is_definition(s: &Statement) -> bool {
    s.is_ddl() && !matches!(s, Statement::TruncateTable(_))
}

/// Key set of a statement executed under `cat`.
pub fn extract_k(stmt: &Statement, cat: &Catalog, scheme: &ClusterScheme, aliases: &AliasMap, opts: KOptions) -> ClusterKeySet {
    if is_definition(stmt) {
        return ClusterKeySet::Deferred;
    }
    if scheme.is_empty() {
        return ClusterKeySet::Universal;
    }
    let mut w = KWalk { scheme, aliases, cat, opts, keys: BTreeSet::new(), universal: false, stack: Vec::new() };
    w.stmt(stmt, &Env::new(), None);
    if w.universal {
        ClusterKeySet::Universal
    } else {
        ClusterKeySet::Keys(w.keys)
    }
}

/// Collects alias mappings from literal inserts and demotes unstable aliases.
struct AliasWalk<'a> {
    scheme: &'a ClusterScheme,
    cat: &'a Catalog,
    out: &'a mut AliasMap,
    stack: Vec<String>,
}

impl AliasWalk<'_> {
    fn alias_of(&self, t: &str) -> Option<Bearer> {
        self.scheme.alias_columns().find(|b| b.column.table == t).cloned()
    }

    fn stmt(&mut self, s: &Statement, env: &Env) {
        match s {
            Statement::Insert(ins) => {
                let t = ins.table.as_str();
                if let Some(a) = self.alias_of(t) {
                    self.insert(ins, &a, env);
                }
                self.fire(t, Event::Insert);
            }
            Statement::Update(u) => {
                if let Some(a) = self.alias_of(&u.table) {
                    let touched = u.sets.iter().any(|(c, _)| {
                        c == &a.column.column || self.scheme.bearers.contains_key(&ColumnRef::new(&u.table, c))
                    });
                    if touched {
                        self.out.demote(&a.column);
                    }
                }
                self.fire(&u.table, Event::Update);
            }
            Statement::Delete(d) => self.fire(&d.table, Event::Delete),
            Statement::TransactionBlock(v) => {
                for x in v {
                    self.stmt(x, env);
                }
            }
            Statement::CallProcedure(p, args) => {
                let key = format!("#proc:{}", p);
                let Some(def) = self.cat.procedures.get(p).cloned() else { return };
                if self.stack.contains(&key) {
                    return;
                }
                let assigned = assigned_vars(&def.body);
                let mut inner = Env::new();
                for (i, (name, _)) in def.params.iter().enumerate() {
                    let b = match args.get(i) {
                        Some(a) if !assigned.contains(name) => bound_of(a, env, None),
                        _ => Bound::Unknown,
                    };
                    inner.insert(name.clone(), b);
                }
                self.stack.push(key);
                self.body(&def.body, &inner);
                self.stack.pop();
            }
            Statement::AlterTable(t, _) | Statement::DropTable(t) | Statement::TruncateTable(t) => {
                if let Some(a) = self.alias_of(t) {
                    if !matches!(s, Statement::TruncateTable(_)) {
                        self.out.demote(&a.column);
                    }
                }
            }
            _ => {}
        }
    }

    fn body(&mut self, b: &[BodyStmt], env: &Env) {
        for s in b {
            match s {
                BodyStmt::Query(q) => self.stmt(q, env),
                BodyStmt::If(br, els) => {
                    for (_, blk) in br {
                        self.body(blk, env);
                    }
                    self.body(els, env);
                }
                _ => {}
            }
        }
    }

    fn fire(&mut self, table: &str, ev: Event) {
        let trigs: Vec<_> = self.cat.triggers.values().filter(|t| t.table == table && t.event == ev).cloned().collect();
        for t in trigs {
            let key = format!("#trigger:{}", t.name);
            if self.stack.contains(&key) {
                continue;
            }
            self.stack.push(key);
            self.body(&t.body, &Env::new());
            self.stack.pop();
        }
    }

    fn insert(&mut self, ins: &Insert, a: &Bearer, env: &Env) {
        let t = ins.table.as_str();
        let Some(schema) = self.cat.tables.get(t).cloned() else { return };
        let InsertSource::Values(rows) = &ins.source else {
            self.out.demote(&a.column);
            return;
        };
        let Some(b) = a.from.clone() else { return };
        let names: Vec<String> = match &ins.columns {
            Some(c) => c.clone(),
            None => schema.column_names().map(String::from).collect(),
        };
        let (Some(ai), Some(bi)) = (names.iter().position(|n| n == &a.column.column), names.iter().position(|n| n == &b.column)) else {
            self.out.demote(&a.column);
            return;
        };
        let aty = schema.col_index(&a.column.column).map(|i| schema.columns[i].ty);
        let bty = schema.col_index(&b.column).map(|i| schema.columns[i].ty);
        for r in rows {
            let av = r.get(ai).map(|e| bound_of(e, env, None));
            let bv = r.get(bi).map(|e| bound_of(e, env, None));
            match (av, bv, aty, bty) {
                (Some(Bound::Lit(x)), Some(Bound::Lit(y)), Some(at), Some(bt)) => {
                    match (x.coerce(at), y.coerce(bt)) {
                        (Some(x), Some(y)) if !x.is_null() && !y.is_null() => self.out.record(&a.column, x, b.clone(), y),
                        _ => self.out.demote(&a.column),
                    }
                }
                _ => self.out.demote(&a.column),
            }
        }
    }
}

/// Scan `records` (each under its own catalog) plus an optional extra statement.
pub fn build_alias_map(
    scheme: &ClusterScheme,
    records: &[QueryRecord],
    hist: &CatalogHistory,
    extra: Option<(&Statement, &Catalog)>,
) -> AliasMap {
    let mut out = AliasMap::default();
    if scheme.alias_columns().next().is_none() {
        return out;
    }
    for r in records {
        let cat = hist.as_of(r.idx.saturating_sub(1));
        AliasWalk { scheme, cat, out: &mut out, stack: Vec::new() }.stmt(&r.stmt, &Env::new());
    }
    if let Some((s, cat)) = extra {
        AliasWalk { scheme, cat, out: &mut out, stack: Vec::new() }.stmt(s, &Env::new());
    }
    out
}

/// A scheme with its alias map; demoted aliases are removed from the scheme.
pub fn settle_scheme(
    keys: &[ColumnRef],
    su: &SchemaUnion,
    records: &[QueryRecord],
    hist: &CatalogHistory,
    extra: Option<(&Statement, &Catalog)>,
) -> (ClusterScheme, AliasMap) {
    let mut demoted = BTreeSet::new();
    loop {
        let s = ClusterScheme::derive(keys, su, &demoted);
        let mut m = build_alias_map(&s, records, hist, extra);
        if m.demoted.is_subset(&demoted) {
            m.demoted = demoted;
            return (s, m);
        }
        demoted.extend(m.demoted.iter().cloned());
    }
}

#[derive(Debug, Clone, Default)]
pub struct ClusterConfig {
    pub hints: Vec<(ColumnRef, ColumnRef)>,
    pub opts: Option<KOptions>,
    /// Use every valid key column at once instead of the single best one.
    pub multi: bool,
}

#[derive(Debug, Clone, Default)]
pub struct Clustering {
    pub scheme: ClusterScheme,
    pub aliases: AliasMap,
    /// Key sets of window writers.
    pub ksets: BTreeMap<u64, ClusterKeySet>,
    pub weight: Option<u128>,
}

fn evaluate(
    scheme: &ClusterScheme,
    aliases: &AliasMap,
    window: &[(&QueryRecord, &RWSet)],
    hist: &CatalogHistory,
    opts: KOptions,
) -> (BTreeMap<u64, ClusterKeySet>, Option<u128>) {
    let n = window.len() as u128;
    let mut ks = BTreeMap::new();
    let mut total: Option<u128> = Some(0);
    for (r, _) in window {
        let k = extract_k(&r.stmt, hist.as_of(r.idx - 1), scheme, aliases, opts);
        total = match (total, k.weight(n)) {
            (Some(a), Some(b)) => Some(a.saturating_add(b)),
            _ => None,
        };
        ks.insert(r.idx, k);
    }
    (ks, total)
}

/// Choice rule: the candidate key column minimizing the sum of squared key-set
/// sizes over the window writers, skipping any column under which some writer is
/// Universal. Ties go to the smallest column name. Empty when nothing qualifies.
pub fn choose_cluster_columns(
    records: &[QueryRecord],
    rws: &BTreeMap<u64, RWSet>,
    hist: &CatalogHistory,
    window: (u64, u64),
    extra: Option<(&Statement, &Catalog)>,
    cfg: &ClusterConfig,
) -> Clustering {
    let opts = cfg.opts.unwrap_or(KOptions { tombstone: false });
    let su = SchemaUnion::from_history(hist, window, &cfg.hints);
    let upto: Vec<QueryRecord> = records.iter().filter(|r| r.idx <= window.1).cloned().collect();
    let win: Vec<(&QueryRecord, &RWSet)> = upto
        .iter()
        .filter(|r| r.idx >= window.0)
        .filter_map(|r| rws.get(&r.idx).filter(|rw| !rw.is_read_only()).map(|rw| (r, rw)))
        .collect();
    let mut best: Option<Clustering> = None;
    let mut valid = Vec::new();
    for c in su.candidates() {
        let keys = alloc::vec![c.clone()];
        let (scheme, aliases) = settle_scheme(&keys, &su, &upto, hist, extra);
        let (ksets, weight) = evaluate(&scheme, &aliases, &win, hist, opts);
        let Some(w) = weight else { continue };
        valid.push(c);
        if best.as_ref().is_none_or(|b| b.weight.is_some_and(|bw| w < bw)) {
            best = Some(Clustering { scheme, aliases, ksets, weight: Some(w) });
        }
    }
    if cfg.multi && valid.len() > 1 {
        let (scheme, aliases) = settle_scheme(&valid, &su, &upto, hist, extra);
        let (ksets, weight) = evaluate(&scheme, &aliases, &win, hist, opts);
        if let Some(w) = weight {
            return Clustering { scheme, aliases, ksets, weight: Some(w) };
        }
    }
    best.unwrap_or_default()
}

/// Union-find over graph nodes.
#[derive(Debug, Clone, Default)]
pub struct Partition {
    ids: BTreeMap<NodeRef, usize>,
    parent: Vec<usize>,
}

impl Partition {
    fn id(&mut self, n: NodeRef) -> usize {
        if let Some(i) = self.ids.get(&n) {
            return *i;
        }
        let i = self.parent.len();
        self.parent.push(i);
        self.ids.insert(n, i);
        i
    }

    fn root(&self, mut i: usize) -> usize {
        while self.parent[i] != i {
            i = self.parent[i];
        }
        i
    }

    fn union(&mut self, a: NodeRef, b: NodeRef) {
        let (x, y) = (self.id(a), self.id(b));
        let (rx, ry) = (self.root(x), self.root(y));
        if rx != ry {
            let (lo, hi) = if rx < ry { (rx, ry) } else { (ry, rx) };
            self.parent[hi] = lo;
        }
    }

    pub fn same(&self, a: NodeRef, b: NodeRef) -> bool {
        match (self.ids.get(&a), self.ids.get(&b)) {
            (Some(x), Some(y)) => self.root(*x) == self.root(*y),
            _ => a == b,
        }
    }

    /// Clusters as sorted node lists, ordered by their smallest node.
    pub fn clusters(&self) -> Vec<Vec<NodeRef>> {
        let mut m: BTreeMap<usize, Vec<NodeRef>> = BTreeMap::new();
        for (n, i) in &self.ids {
            m.entry(self.root(*i)).or_default().push(*n);
        }
        let mut v: Vec<Vec<NodeRef>> = m.into_values().collect();
        v.sort();
        v
    }
}

/// Merge nodes whose key sets intersect, then attach deferred nodes to the nodes
/// listed for them in `links`.
pub fn partition_queries(ksets: &BTreeMap<NodeRef, ClusterKeySet>, links: &BTreeMap<NodeRef, Vec<NodeRef>>) -> Partition {
    let mut p = Partition::default();
    let mut points: BTreeMap<&Key, NodeRef> = BTreeMap::new();
    let mut ranges: Vec<(&Key, NodeRef)> = Vec::new();
    let mut universal: Option<NodeRef> = None;
    let mut keyed: Vec<NodeRef> = Vec::new();
    for (n, k) in ksets {
        p.id(*n);
        match k {
            ClusterKeySet::Universal => {
                if let Some(u) = universal {
                    p.union(u, *n);
                } else {
                    universal = Some(*n);
                }
            }
            ClusterKeySet::Deferred => {}
            ClusterKeySet::Keys(ks) => {
                if !ks.is_empty() {
                    keyed.push(*n);
                }
                for key in ks {
                    match key {
                        Key::Range(..) => ranges.push((key, *n)),
                        _ => match points.get(key) {
                            Some(m) => p.union(*m, *n),
                            None => {
                                points.insert(key, *n);
                            }
                        },
                    }
                }
            }
        }
    }
    for (i, (rk, rn)) in ranges.iter().enumerate() {
        for (pk, pn) in &points {
            if rk.meets(pk) {
                p.union(*rn, *pn);
            }
        }
        for (rk2, rn2) in &ranges[i + 1..] {
            if rk.meets(rk2) {
                p.union(*rn, *rn2);
            }
        }
    }
    if let Some(u) = universal {
        for n in keyed {
            p.union(u, n);
        }
    }
    for (d, targets) in links {
        p.id(*d);
        for t in targets {
            p.union(*d, *t);
        }
    }
    p
}

fn users<'a>(g: &'a DependencyGraph, target_rw: &'a RWSet) -> Vec<(NodeRef, &'a RWSet, u64)> {
    let mut users: Vec<(NodeRef, &RWSet, u64)> = g.nodes.iter().map(|(i, rw)| (NodeRef::Query(*i), rw, *i)).collect();
    users.push((NodeRef::Target, target_rw, g.window.0));
    users
}

/// Queries (and the target) that fire each trigger node.
pub fn trigger_firers(g: &DependencyGraph) -> BTreeMap<NodeRef, Vec<NodeRef>> {
    let target_rw = g.target.combined();
    let users = users(g, &target_rw);
    g.triggers
        .iter()
        .map(|t| {
            let v = users
                .iter()
                .filter(|(k, rw, at)| *k != NodeRef::Query(t.idx) && t.interval.alive_at(*at) && rw.linked.contains(&t.name))
                .map(|(k, _, _)| *k)
                .collect();
            (NodeRef::Trigger(t.idx), v)
        })
        .collect()
}

/// Deferred definitions and the queries that access what they write. Trigger
/// nodes are not linked: a firing query's key set already covers the rows the
/// body touches, so linking them would merge every cluster that fires the trigger.
pub fn deferred_links(g: &DependencyGraph, ksets: &BTreeMap<NodeRef, ClusterKeySet>) -> BTreeMap<NodeRef, Vec<NodeRef>> {
    let mut out: BTreeMap<NodeRef, Vec<NodeRef>> = BTreeMap::new();
    let target_rw = g.target.combined();
    let users = users(g, &target_rw);
    for (n, k) in ksets {
        if !matches!(k, ClusterKeySet::Deferred) {
            continue;
        }
        let Some(rw) = (match n {
            NodeRef::Target => Some(&target_rw),
            NodeRef::Query(i) => g.nodes.get(i),
            NodeRef::Trigger(_) => None,
        }) else {
            continue;
        };
        let v: Vec<NodeRef> = users
            .iter()
            .filter(|(k, urw, _)| k != n && rw.writes.iter().any(|c| urw.accesses(c)))
            .map(|(k, _, _)| *k)
            .collect();
        out.entry(*n).or_default().extend(v);
    }
    out
}

/// Keep the members co-clustered with the target, and trigger nodes fired by
/// something in that cluster.
pub fn filter_replay_set(g: &DependencyGraph, rs: &ReplaySet, p: &Partition) -> ReplaySet {
    let firers = trigger_firers(g);
    let keep: BTreeSet<u64> = rs
        .members
        .iter()
        .filter(|m| {
            if rs.trigger_members.contains(m) {
                let n = NodeRef::Trigger(**m);
                p.same(n, NodeRef::Target) || firers.get(&n).is_some_and(|v| v.iter().any(|f| p.same(*f, NodeRef::Target)))
            } else {
                p.same(NodeRef::Query(**m), NodeRef::Target)
            }
        })
        .copied()
        .collect();
    crate::graph::restrict(g, rs, &keep)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{build_graph, replay_set, TargetKind, TargetSpec};
    use crate::record::{build_log, RawRecord};
    use crate::rw::extract_rw;

    fn log(stmts: &[&str]) -> (Vec<QueryRecord>, CatalogHistory, BTreeMap<u64, RWSet>) {
        let raw = stmts
            .iter()
            .enumerate()
            .map(|(i, s)| RawRecord { line: i + 1, idx: i as u64 + 1, ts: 0, session: "s".into(), text: (*s).into(), nondet: Vec::new() })
            .collect();
        let (recs, hist) = build_log(raw, Catalog::default()).unwrap();
        let rws = recs.iter().map(|r| (r.idx, extract_rw(&r.stmt, hist.as_of(r.idx - 1), r.idx).unwrap())).collect();
        (recs, hist, rws)
    }

    fn bank() -> Vec<&'static str> {
        crate::graph::tests::BANK.to_vec()
    }

    fn hint() -> ClusterConfig {
        ClusterConfig { hints: alloc::vec![(ColumnRef::new("Statements", "aid"), ColumnRef::new("Accounts", "aid"))], ..Default::default() }
    }

    fn point(v: &str) -> Key {
        Key::Point(ColumnRef::new("Users", "uid"), Value::text(v))
    }

    #[test]
    fn bank_scheme_and_keys() {
        let (recs, hist, rws) = log(&bank());
        let c = choose_cluster_columns(&recs, &rws, &hist, (10, 13), None, &hint());
        assert_eq!(c.scheme.keys, alloc::vec![ColumnRef::new("Users", "uid")]);
        let dump = c.scheme.dump();
        assert!(dump.contains("KEY Users.uid"), "{}", dump);
        assert!(dump.contains("FOREIGN Accounts.uid <- Users.uid"));
        assert!(dump.contains("ALIAS Accounts.aid ~ Accounts.uid"));
        assert!(dump.contains("FOREIGN Transactions.sender <- Accounts.aid"));
        assert!(dump.contains("FOREIGN Statements.aid <- Accounts.aid"));
        let k = |i: u64| c.ksets[&i].clone();
        assert_eq!(k(10), ClusterKeySet::Keys(BTreeSet::from([point("alice"), point("bob")])));
        assert_eq!(k(11), ClusterKeySet::Keys(BTreeSet::from([point("charlie")])));
        assert_eq!(k(12), ClusterKeySet::Keys(BTreeSet::from([point("charlie")])));
        assert_eq!(k(13), ClusterKeySet::Keys(BTreeSet::from([point("alice")])));
    }

    #[test]
    fn unpinned_update_is_universal() {
        let (recs, hist, _) = log(&bank());
        let su = SchemaUnion::from_history(&hist, (1, 13), &[]);
        let (s, a) = settle_scheme(&[ColumnRef::new("Users", "uid")], &su, &recs, &hist, None);
        let cat = hist.current();
        let q = parse_statement("UPDATE Accounts SET balance = 0", cat, 14).unwrap();
        assert!(extract_k(&q, cat, &s, &a, KOptions { tombstone: false }).is_universal());
        let q = parse_statement("UPDATE Accounts SET balance = 0 WHERE aid IN (1, 2)", cat, 14).unwrap();
        assert_eq!(
            extract_k(&q, cat, &s, &a, KOptions { tombstone: false }),
            ClusterKeySet::Keys(BTreeSet::from([point("alice"), point("bob")]))
        );
        // Unmapped alias value.
        let q = parse_statement("UPDATE Accounts SET balance = 0 WHERE aid = 9", cat, 14).unwrap();
        assert!(extract_k(&q, cat, &s, &a, KOptions { tombstone: false }).is_universal());
        // Writers of a table with two bearers must pin both.
        let q = parse_statement("DELETE FROM Transactions WHERE sender = 1", cat, 14).unwrap();
        assert!(extract_k(&q, cat, &s, &a, KOptions { tombstone: false }).is_universal());
        let q = parse_statement("DELETE FROM Transactions WHERE sender = 1 AND receiver = 2", cat, 14).unwrap();
        assert!(!extract_k(&q, cat, &s, &a, KOptions { tombstone: false }).is_universal());
    }

    #[test]
    fn alias_conflict_demotes() {
        let mut b = bank();
        b.push("DELETE FROM Accounts WHERE aid = 3");
        b.push("INSERT INTO Accounts VALUES (3, 'bob', 0)");
        let (recs, hist, _) = log(&b);
        let su = SchemaUnion::from_history(&hist, (1, 15), &[]);
        let (s, a) = settle_scheme(&[ColumnRef::new("Users", "uid")], &su, &recs, &hist, None);
        assert!(a.demoted.contains(&ColumnRef::new("Accounts", "aid")));
        assert!(!s.bearers.contains_key(&ColumnRef::new("Accounts", "aid")));
        assert!(!s.bearers.contains_key(&ColumnRef::new("Transactions", "sender")));
    }

    #[test]
    fn partition_rules() {
        let a = || ColumnRef::new("T", "k");
        let ks = |v: &[i64]| ClusterKeySet::Keys(v.iter().map(|x| Key::Point(a(), Value::Int(*x))).collect());
        let mut m = BTreeMap::new();
        m.insert(NodeRef::Query(1), ks(&[1, 2]));
        m.insert(NodeRef::Query(2), ks(&[1]));
        m.insert(NodeRef::Query(3), ks(&[3]));
        let p = partition_queries(&m, &BTreeMap::new());
        assert!(p.same(NodeRef::Query(1), NodeRef::Query(2)));
        assert!(!p.same(NodeRef::Query(1), NodeRef::Query(3)));
        assert_eq!(p.clusters().len(), 2);

        let mut m = BTreeMap::new();
        m.insert(NodeRef::Query(1), ClusterKeySet::Universal);
        m.insert(NodeRef::Query(2), ks(&[5]));
        m.insert(NodeRef::Query(3), ClusterKeySet::Universal);
        assert_eq!(partition_queries(&m, &BTreeMap::new()).clusters().len(), 1);

        let mut m = BTreeMap::new();
        m.insert(NodeRef::Query(1), ClusterKeySet::Keys(BTreeSet::from([Key::Range(a(), Value::Int(10), Value::Int(20))])));
        m.insert(NodeRef::Query(2), ks(&[15]));
        m.insert(NodeRef::Query(3), ks(&[25]));
        let p = partition_queries(&m, &BTreeMap::new());
        assert!(p.same(NodeRef::Query(1), NodeRef::Query(2)));
        assert!(!p.same(NodeRef::Query(1), NodeRef::Query(3)));
    }

    #[test]
    fn range_overlap_matches_scan() {
        let c = ColumnRef::new("T", "k");
        for lo in 0..6i64 {
            for hi in lo..6 {
                for x in 0..6i64 {
                    let r = Key::Range(c.clone(), Value::Int(lo), Value::Int(hi));
                    let p = Key::Point(c.clone(), Value::Int(x));
                    assert_eq!(r.meets(&p), (lo..=hi).contains(&x));
                    for lo2 in 0..6i64 {
                        let r2 = Key::Range(c.clone(), Value::Int(lo2), Value::Int(lo2 + 1));
                        let brute = (lo..=hi).any(|v| (lo2..=lo2 + 1).contains(&v));
                        assert_eq!(r.meets(&r2), brute);
                    }
                }
            }
        }
    }

    #[test]
    fn bank_filter_drops_q12() {
        let (recs, hist, rws) = log(&bank());
        let win: Vec<(u64, RWSet)> = rws.iter().filter(|(i, _)| **i >= 10).map(|(i, r)| (*i, r.clone())).collect();
        let t = TargetSpec { kind: TargetKind::Remove, idx: 10, old_rw: Some(rws[&10].clone()), new_rw: None };
        let g = build_graph(&win, &hist, (10, 13), t).unwrap();
        let rs = replay_set(&g);
        let c = choose_cluster_columns(&recs, &rws, &hist, (10, 13), None, &hint());
        let mut ks: BTreeMap<NodeRef, ClusterKeySet> = BTreeMap::new();
        for (i, k) in &c.ksets {
            ks.insert(if *i == 10 { NodeRef::Target } else { NodeRef::Query(*i) }, k.clone());
        }
        for t in &g.triggers {
            ks.insert(NodeRef::Trigger(t.idx), ClusterKeySet::Deferred);
        }
        let links = deferred_links(&g, &ks);
        let p = partition_queries(&ks, &links);
        let f = filter_replay_set(&g, &rs, &p);
        assert_eq!(f.members, BTreeSet::from([5, 13]));
        // Without the hint Statements is not covered and nothing can be dropped.
        let c = choose_cluster_columns(&recs, &rws, &hist, (10, 13), None, &ClusterConfig::default());
        assert!(!c.ksets[&13].is_universal());
        assert!(matches!(&c.ksets[&13], ClusterKeySet::Keys(k) if k.contains(&Key::Table("Statements".into()))));
    }

    #[test]
    fn procedure_params_pin() {
        let (recs, hist, rws) = log(&[
            "CREATE TABLE Tenant (tid INT PRIMARY KEY)",
            "CREATE TABLE T (tid INT REFERENCES Tenant(tid), id INT, v INT, PRIMARY KEY (tid, id))",
            "CREATE PROCEDURE Bump(t INT, i INT) BEGIN UPDATE T SET v = v + 1 WHERE tid = t AND id = i; END",
            "CREATE PROCEDURE Bad(t INT) BEGIN SET t = t + 1; UPDATE T SET v = 0 WHERE tid = t; END",
            "INSERT INTO T VALUES (1, 1, 0)",
            "CALL Bump(1, 1)",
            "CALL Bump(2, 1)",
        ]);
        let c = choose_cluster_columns(&recs, &rws, &hist, (5, 7), None, &ClusterConfig::default());
        assert_eq!(c.scheme.keys, alloc::vec![ColumnRef::new("Tenant", "tid")]);
        let k = |v: i64| ClusterKeySet::Keys(BTreeSet::from([Key::Point(ColumnRef::new("Tenant", "tid"), Value::Int(v))]));
        assert_eq!(c.ksets[&6], k(1));
        assert_eq!(c.ksets[&7], k(2));
        let cat = hist.current();
        let q = parse_statement("CALL Bad(1)", cat, 8).unwrap();
        assert!(extract_k(&q, cat, &c.scheme, &c.aliases, KOptions { tombstone: false }).is_universal());
    }

    #[test]
    fn multi_key_seats_shape() {
        let (recs, hist, rws) = log(&[
            "CREATE TABLE Flight (f_id INT PRIMARY KEY, seats INT)",
            "CREATE TABLE Customer (c_id INT PRIMARY KEY, bal INT)",
            "CREATE TABLE Reservation (f_id INT REFERENCES Flight(f_id), c_id INT REFERENCES Customer(c_id), seat INT)",
            "INSERT INTO Flight VALUES (1, 10)",
            "INSERT INTO Customer VALUES (7, 0)",
            "INSERT INTO Reservation VALUES (1, 7, 3)",
            "UPDATE Flight SET seats = seats - 1 WHERE f_id = 1",
            "UPDATE Customer SET bal = bal + 5 WHERE c_id = 7",
            "DELETE FROM Reservation WHERE f_id = 1 AND c_id = 7",
        ]);
        let cfg = ClusterConfig { multi: true, ..Default::default() };
        let c = choose_cluster_columns(&recs, &rws, &hist, (4, 9), None, &cfg);
        assert_eq!(c.scheme.keys, alloc::vec![ColumnRef::new("Customer", "c_id"), ColumnRef::new("Flight", "f_id")]);
        let k9 = &c.ksets[&9];
        assert_eq!(
            k9,
            &ClusterKeySet::Keys(BTreeSet::from([
                Key::Point(ColumnRef::new("Customer", "c_id"), Value::Int(7)),
                Key::Point(ColumnRef::new("Flight", "f_id"), Value::Int(1)),
            ]))
        );
    }

    #[test]
    fn every_candidate_universal_gives_empty_scheme() {
        let (recs, hist, rws) = log(&[
            "CREATE TABLE T (id INT PRIMARY KEY, v INT)",
            "INSERT INTO T VALUES (1, 0)",
            "UPDATE T SET v = 1",
        ]);
        let c = choose_cluster_columns(&recs, &rws, &hist, (2, 3), None, &ClusterConfig::default());
        assert!(c.scheme.is_empty());
    }
}
