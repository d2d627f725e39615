//! Schema catalog with time-indexed versions.

pub mod resolve;

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec::Vec;

use sha2::{Digest, Sha256};

use crate::error::CatalogError;
use crate::rw::ColumnRef;
use crate::sql::*;
use crate::value::{ScalarType, Value};

#[derive(Debug, Clone, PartialEq)]
pub struct ColumnSchema {
    pub name: String,
    pub ty: ScalarType,
    pub auto_increment: bool,
    pub not_null: bool,
    pub default: Option<Value>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TableSchema {
    pub name: String,
    pub columns: Vec<ColumnSchema>,
    /// Column positions of the primary key, empty when the table has none.
    pub primary_key: Vec<usize>,
    pub foreign_keys: Vec<ForeignKey>,
    pub checks: Vec<Expr>,
    pub created_at: u64,
}

impl TableSchema {
    pub fn col_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }

    pub fn column_names(&self) -> impl Iterator<Item = &str> {
        self.columns.iter().map(|c| c.name.as_str())
    }

    pub fn auto_increment_column(&self) -> Option<usize> {
        self.columns.iter().position(|c| c.auto_increment)
    }

    pub fn is_pk_column(&self, name: &str) -> bool {
        self.primary_key.iter().any(|&i| self.columns[i].name == name)
    }

    /// Digest over the structural definition; creation index excluded.
    pub fn digest(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update(self.name.as_bytes());
        for c in &self.columns {
            h.update([0u8]);
            h.update(c.name.as_bytes());
            h.update([0u8, c.ty.tag()]);
            if let ScalarType::Decimal { scale } = c.ty {
                h.update([scale]);
            }
            h.update([c.auto_increment as u8, c.not_null as u8]);
            if let Some(d) = &c.default {
                h.update(d.to_sql().as_bytes());
            }
        }
        h.update([1u8]);
        for &i in &self.primary_key {
            h.update((i as u32).to_be_bytes());
        }
        for fk in &self.foreign_keys {
            h.update([2u8]);
            h.update(format!("{}", fk).as_bytes());
        }
        for c in &self.checks {
            h.update([3u8]);
            h.update(format!("{}", c).as_bytes());
        }
        h.finalize().into()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ViewDef {
    pub name: String,
    pub query: Select,
    pub columns: Vec<String>,
    pub base_columns: BTreeSet<ColumnRef>,
    pub created_at: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TriggerDef {
    pub name: String,
    pub timing: Timing,
    pub event: Event,
    pub table: String,
    pub body: Vec<BodyStmt>,
    pub created_at: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProcDef {
    pub name: String,
    pub params: Vec<(String, ScalarType)>,
    pub body: Vec<BodyStmt>,
    pub created_at: u64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Catalog {
    pub tables: BTreeMap<String, Arc<TableSchema>>,
    pub views: BTreeMap<String, Arc<ViewDef>>,
    pub triggers: BTreeMap<String, Arc<TriggerDef>>,
    pub procedures: BTreeMap<String, Arc<ProcDef>>,
}

/// Output column names of a source (table or view).
pub fn source_columns(cat: &Catalog, name: &str) -> Option<Vec<String>> {
    if let Some(t) = cat.tables.get(name) {
        return Some(t.columns.iter().map(|c| c.name.clone()).collect());
    }
    cat.views.get(name).map(|v| v.columns.clone())
}

impl Catalog {
    pub fn table(&self, name: &str) -> Option<&Arc<TableSchema>> {
        self.tables.get(name)
    }

    pub fn has_name(&self, name: &str) -> bool {
        self.tables.contains_key(name) || self.views.contains_key(name)
    }

    /// Triggers on `table` for `event` in firing order (creation index, then name).
    pub fn triggers_for(&self, table: &str, event: Event, timing: Timing) -> Vec<Arc<TriggerDef>> {
        let mut v: Vec<Arc<TriggerDef>> = self
            .triggers
            .values()
            .filter(|t| t.table == table && t.event == event && t.timing == timing)
            .cloned()
            .collect();
        v.sort_by(|a, b| (a.created_at, &a.name).cmp(&(b.created_at, &b.name)));
        v
    }

    /// Foreign keys of other tables (and self) referencing `table`.
    pub fn referencing(&self, table: &str) -> Vec<(String, ForeignKey)> {
        let mut v = Vec::new();
        for (name, t) in &self.tables {
            for fk in &t.foreign_keys {
                if fk.ref_table == table {
                    v.push((name.clone(), fk.clone()));
                }
            }
        }
        v
    }

    /// Digest of everything except table schemas: views, triggers, procedures.
    pub fn object_digest(&self, kind: ObjectKind, name: &str) -> Option<String> {
        match kind {
            ObjectKind::Table => self.tables.get(name).map(|t| hex(&t.digest())),
            ObjectKind::View => self.views.get(name).map(|v| format!("{}", v.query)),
            ObjectKind::Trigger => self.triggers.get(name).map(|t| {
                format!("{:?}{:?}{}{:?}", t.timing, t.event, t.table, t.body)
            }),
            ObjectKind::Procedure => {
                self.procedures.get(name).map(|p| format!("{:?}{:?}", p.params, p.body))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ObjectKind {
    Table,
    View,
    Trigger,
    Procedure,
}

pub fn hex(bytes: &[u8]) -> String {
    const D: &[u8; 16] = b"0123456789abcdef";
    let mut s = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        s.push(D[(b >> 4) as usize] as char);
        s.push(D[(b & 15) as usize] as char);
    }
    s
}

fn check_expr_ok(e: &Expr, table: &TableSchema) -> Result<(), CatalogError> {
    let mut err = None;
    e.walk(&mut |x| match x {
        Expr::Col(c) => {
            if table.col_index(&c.column).is_none()
                || c.table.as_deref().is_some_and(|t| t != table.name)
            {
                err = Some(CatalogError::UnresolvedName(format!("{}", c)));
            }
        }
        Expr::Subquery(_) | Expr::Nondet(_) | Expr::Agg(..) | Expr::Var(_) | Expr::Row(..) => {
            err = Some(CatalogError::Invalid("CHECK must be a single-table predicate".into()))
        }
        _ => {}
    });
    match err {
        Some(e) => Err(e),
        None => Ok(()),
    }
}

fn qualify_check(e: &mut Expr, table: &str) {
    e.walk_mut(&mut |x| {
        if let Expr::Col(c) = x {
            c.table = Some(table.into());
        }
    });
}

fn validate_fk(cat: &Catalog, fk: &ForeignKey, own: &TableSchema) -> Result<(), CatalogError> {
    if own.col_index(&fk.column).is_none() {
        return Err(CatalogError::UnresolvedName(format!("{}.{}", own.name, fk.column)));
    }
    let target = if fk.ref_table == own.name {
        Some(own)
    } else {
        cat.tables.get(&fk.ref_table).map(|t| t.as_ref())
    };
    match target {
        Some(t) if t.col_index(&fk.ref_column).is_some() => Ok(()),
        _ => Err(CatalogError::UnresolvedName(format!("{}.{}", fk.ref_table, fk.ref_column))),
    }
}

fn column_schema(c: &ColumnDef) -> Result<ColumnSchema, CatalogError> {
    if c.auto_increment && c.ty != ScalarType::Int {
        return Err(CatalogError::Invalid(format!("AUTO_INCREMENT column {} must be INT", c.name)));
    }
    if let Some(d) = &c.default {
        if d.coerce(c.ty).is_none() {
            return Err(CatalogError::Invalid(format!("bad DEFAULT for {}", c.name)));
        }
    }
    Ok(ColumnSchema {
        name: c.name.clone(),
        ty: c.ty,
        auto_increment: c.auto_increment,
        not_null: c.not_null,
        default: c.default.as_ref().and_then(|d| d.coerce(c.ty)),
    })
}

/// Apply a DDL statement, returning the evolved catalog. The input is left untouched.
pub fn apply_ddl(cat: &Catalog, stmt: &Statement, at_idx: u64) -> Result<Catalog, CatalogError> {
    let mut next = cat.clone();
    match stmt {
        Statement::CreateTable(ct) => {
            if cat.has_name(&ct.name) {
                return Err(CatalogError::DuplicateName(ct.name.clone()));
            }
            let mut columns = Vec::new();
            let mut seen = BTreeSet::new();
            for c in &ct.columns {
                if !seen.insert(c.name.clone()) {
                    return Err(CatalogError::DuplicateName(format!("{}.{}", ct.name, c.name)));
                }
                columns.push(column_schema(c)?);
            }
            let mut pk_names: Vec<String> =
                ct.columns.iter().filter(|c| c.primary_key).map(|c| c.name.clone()).collect();
            if !ct.primary_key.is_empty() {
                if !pk_names.is_empty() {
                    return Err(CatalogError::Invalid("two primary keys".into()));
                }
                pk_names = ct.primary_key.clone();
            }
            if columns.iter().filter(|c| c.auto_increment).count() > 1 {
                return Err(CatalogError::Invalid("more than one AUTO_INCREMENT column".into()));
            }
            let mut schema = TableSchema {
                name: ct.name.clone(),
                columns,
                primary_key: Vec::new(),
                foreign_keys: ct.foreign_keys.clone(),
                checks: ct.checks.clone(),
                created_at: at_idx,
            };
            for n in &pk_names {
                let i = schema
                    .col_index(n)
                    .ok_or_else(|| CatalogError::UnresolvedName(format!("{}.{}", ct.name, n)))?;
                schema.primary_key.push(i);
                schema.columns[i].not_null = true;
            }
            for fk in &schema.foreign_keys {
                validate_fk(cat, fk, &schema)?;
            }
            for c in &schema.checks {
                check_expr_ok(c, &schema)?;
            }
            for c in &mut schema.checks {
                qualify_check(c, &ct.name);
            }
            next.tables.insert(ct.name.clone(), Arc::new(schema));
        }
        Statement::AlterTable(t, action) => {
            let old = cat.tables.get(t).ok_or_else(|| CatalogError::UnresolvedName(t.clone()))?;
            let mut s = (**old).clone();
            match action {
                AlterAction::AddColumn(c) => {
                    if s.col_index(&c.name).is_some() {
                        return Err(CatalogError::DuplicateName(format!("{}.{}", t, c.name)));
                    }
                    if c.not_null && c.default.is_none() {
                        return Err(CatalogError::Invalid("NOT NULL column needs DEFAULT".into()));
                    }
                    if c.auto_increment {
                        return Err(CatalogError::Invalid("cannot add AUTO_INCREMENT column".into()));
                    }
                    s.columns.push(column_schema(c)?);
                }
                AlterAction::DropColumn(c) => {
                    let i = s
                        .col_index(c)
                        .ok_or_else(|| CatalogError::UnresolvedName(format!("{}.{}", t, c)))?;
                    let used_locally = s.primary_key.contains(&i)
                        || s.foreign_keys.iter().any(|f| &f.column == c)
                        || s.checks.iter().any(|e| format!("{}", e).contains(c.as_str()));
                    let referenced = cat
                        .referencing(t)
                        .iter()
                        .any(|(_, fk)| &fk.ref_column == c);
                    let in_view = cat.views.values().any(|v| {
                        v.base_columns.contains(&ColumnRef::new(t, c))
                            || v.base_columns.contains(&ColumnRef::all(t))
                    });
                    if used_locally || referenced || in_view {
                        return Err(CatalogError::Invalid(format!("column {}.{} is in use", t, c)));
                    }
                    s.columns.remove(i);
                    for p in &mut s.primary_key {
                        if *p > i {
                            *p -= 1;
                        }
                    }
                }
                AlterAction::AddForeignKey(fk) => {
                    validate_fk(cat, fk, &s)?;
                    s.foreign_keys.push(fk.clone());
                }
                AlterAction::AddCheck(e) => {
                    let mut e = e.clone();
                    check_expr_ok(&e, &s)?;
                    qualify_check(&mut e, t);
                    s.checks.push(e);
                }
            }
            next.tables.insert(t.clone(), Arc::new(s));
        }
        Statement::DropTable(t) => {
            if !cat.tables.contains_key(t) {
                return Err(CatalogError::DropMissing(t.clone()));
            }
            if cat.referencing(t).iter().any(|(child, _)| child != t) {
                return Err(CatalogError::Invalid(format!("table {} is referenced by a foreign key", t)));
            }
            next.tables.remove(t);
            next.triggers.retain(|_, tr| &tr.table != t);
        }
        Statement::TruncateTable(t) => {
            if !cat.tables.contains_key(t) {
                return Err(CatalogError::UnresolvedName(t.clone()));
            }
        }
        Statement::CreateView { name, or_replace, query } => {
            if cat.tables.contains_key(name) || (cat.views.contains_key(name) && !or_replace) {
                return Err(CatalogError::DuplicateName(name.clone()));
            }
            let mut q = (**query).clone();
            resolve::resolve_select(&mut q, cat, &resolve::Ctx::default(), &[])
                .map_err(|e| CatalogError::Invalid(format!("{}", e)))?;
            if q.has_aggregate_items() || !q.into.is_empty() {
                return Err(CatalogError::Invalid("views must be plain projections".into()));
            }
            let columns = resolve::output_columns(&q, cat)
                .map_err(|e| CatalogError::Invalid(format!("{}", e)))?;
            let mut seen = BTreeSet::new();
            for c in &columns {
                if !seen.insert(c.clone()) {
                    return Err(CatalogError::DuplicateName(format!("{}.{}", name, c)));
                }
            }
            if view_depends_on(cat, &q, name) {
                return Err(CatalogError::Invalid("recursive view".into()));
            }
            let base_columns = view_base_columns(cat, &q);
            next.views.insert(
                name.clone(),
                Arc::new(ViewDef { name: name.clone(), query: q, columns, base_columns, created_at: at_idx }),
            );
        }
        Statement::DropView(v) => {
            if next.views.remove(v).is_none() {
                return Err(CatalogError::DropMissing(v.clone()));
            }
        }
        Statement::CreateTrigger(ct) => {
            if cat.triggers.contains_key(&ct.name) {
                return Err(CatalogError::DuplicateName(ct.name.clone()));
            }
            if !cat.tables.contains_key(&ct.table) {
                return Err(CatalogError::UnresolvedName(ct.table.clone()));
            }
            let mut body = ct.body.clone();
            let ctx = resolve::Ctx { trigger: Some((ct.table.clone(), ct.event)), ..Default::default() };
            resolve::resolve_body(&mut body, cat, ctx).map_err(|e| CatalogError::Invalid(format!("{}", e)))?;
            next.triggers.insert(
                ct.name.clone(),
                Arc::new(TriggerDef {
                    name: ct.name.clone(),
                    timing: ct.timing,
                    event: ct.event,
                    table: ct.table.clone(),
                    body,
                    created_at: at_idx,
                }),
            );
        }
        Statement::DropTrigger(t) => {
            if next.triggers.remove(t).is_none() {
                return Err(CatalogError::DropMissing(t.clone()));
            }
        }
        Statement::CreateProcedure(p) => {
            if cat.procedures.contains_key(&p.name) {
                return Err(CatalogError::DuplicateName(p.name.clone()));
            }
            let mut body = p.body.clone();
            let mut ctx = resolve::Ctx::default();
            for (n, _) in &p.params {
                ctx.vars.insert(n.clone());
            }
            resolve::resolve_body(&mut body, cat, ctx).map_err(|e| CatalogError::Invalid(format!("{}", e)))?;
            next.procedures.insert(
                p.name.clone(),
                Arc::new(ProcDef { name: p.name.clone(), params: p.params.clone(), body, created_at: at_idx }),
            );
        }
        _ => return Err(CatalogError::NotDdl),
    }
    Ok(next)
}

impl Select {
    pub fn has_aggregate_items(&self) -> bool {
        self.items.iter().any(|i| matches!(i, SelectItem::Expr(e, _) if e.has_aggregate()))
    }
}

fn select_refs(q: &Select, out: &mut Vec<ColumnRef>) {
    for it in &q.items {
        match it {
            SelectItem::Star(None) => {
                for s in q.sources() {
                    out.push(ColumnRef::all(s));
                }
            }
            SelectItem::Star(Some(t)) => out.push(ColumnRef::all(t)),
            SelectItem::Expr(e, _) => expr_refs(e, out),
        }
    }
    for j in &q.joins {
        for c in [&j.left, &j.right] {
            if let Some(t) = &c.table {
                out.push(ColumnRef::new(t, &c.column));
            }
        }
    }
    if let Some(f) = &q.filter {
        expr_refs(f, out);
    }
    for (e, _) in &q.order_by {
        expr_refs(e, out);
    }
}

fn expr_refs(e: &Expr, out: &mut Vec<ColumnRef>) {
    e.walk(&mut |x| match x {
        Expr::Col(c) => {
            if let Some(t) = &c.table {
                out.push(ColumnRef::new(t, &c.column));
            }
        }
        Expr::Subquery(s) => select_refs(s, out),
        _ => {}
    });
}

fn view_depends_on(cat: &Catalog, q: &Select, name: &str) -> bool {
    q.sources().iter().any(|s| {
        *s == name || cat.views.get(*s).is_some_and(|v| view_depends_on(cat, &v.query, name))
    })
}

/// Base-table columns a view reads, expanded through views and wildcards.
pub fn view_base_columns(cat: &Catalog, q: &Select) -> BTreeSet<ColumnRef> {
    let mut refs = Vec::new();
    select_refs(q, &mut refs);
    let mut out = BTreeSet::new();
    for r in refs {
        if let Some(v) = cat.views.get(&r.table) {
            out.extend(v.base_columns.iter().cloned());
        } else if r.is_all() {
            if let Some(t) = cat.tables.get(&r.table) {
                for c in t.column_names() {
                    out.insert(ColumnRef::new(&r.table, c));
                }
            }
        } else {
            out.insert(r);
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TriggerInterval {
    pub create_idx: u64,
    pub drop_idx: Option<u64>,
}

impl TriggerInterval {
    /// Alive for a query committed at `idx`.
    pub fn alive_at(&self, idx: u64) -> bool {
        self.create_idx < idx && self.drop_idx.is_none_or(|d| idx < d)
    }
}

/// Versioned catalog: every DDL commit appends a version.
#[derive(Debug, Clone, Default)]
pub struct CatalogHistory {
    versions: Vec<(u64, Arc<Catalog>)>,
    /// (trigger name, definition, interval), in creation order.
    pub trigger_intervals: Vec<(String, Arc<TriggerDef>, TriggerInterval)>,
}

impl CatalogHistory {
    pub fn new(initial: Catalog) -> Self {
        CatalogHistory { versions: alloc::vec![(0, Arc::new(initial))], trigger_intervals: Vec::new() }
    }

    /// State after every DDL with index <= idx.
    pub fn as_of(&self, idx: u64) -> &Arc<Catalog> {
        let p = self.versions.partition_point(|(i, _)| *i <= idx);
        &self.versions[p.saturating_sub(1)].1
    }

    pub fn current(&self) -> &Arc<Catalog> {
        &self.versions.last().expect("history is never empty").1
    }

    pub fn versions(&self) -> &[(u64, Arc<Catalog>)] {
        &self.versions
    }

    /// Record a new version at `idx`; trigger intervals are derived by diffing.
    pub fn push(&mut self, idx: u64, cat: Catalog) {
        let prev = self.current().clone();
        for (name, def) in &cat.triggers {
            if prev.triggers.get(name) != Some(def) {
                self.trigger_intervals
                    .push((name.clone(), def.clone(), TriggerInterval { create_idx: idx, drop_idx: None }));
            }
        }
        for (name, def) in &prev.triggers {
            if cat.triggers.get(name) != Some(def) {
                if let Some(e) = self
                    .trigger_intervals
                    .iter_mut()
                    .rev()
                    .find(|(n, _, iv)| n == name && iv.drop_idx.is_none())
                {
                    e.2.drop_idx = Some(idx);
                }
            }
        }
        if self.versions.last().is_some_and(|(i, _)| *i == idx) {
            self.versions.last_mut().unwrap().1 = Arc::new(cat);
        } else {
            self.versions.push((idx, Arc::new(cat)));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sql::parse;

    fn ddl(cat: &Catalog, s: &str, idx: u64) -> Result<Catalog, CatalogError> {
        apply_ddl(cat, &parse(s).unwrap(), idx)
    }

    #[test]
    fn bank_schema() {
        let c = Catalog::default();
        let c = ddl(&c, "CREATE TABLE Users (uid TEXT PRIMARY KEY, ssn TEXT)", 1).unwrap();
        let c = ddl(&c, "CREATE TABLE Accounts (aid INT PRIMARY KEY, uid TEXT REFERENCES Users(uid), balance INT)", 2).unwrap();
        assert_eq!(c.tables["Accounts"].foreign_keys.len(), 1);
        assert_eq!(
            ddl(&c, "CREATE TABLE Users (x INT)", 3),
            Err(CatalogError::DuplicateName("Users".into()))
        );
        assert!(matches!(
            ddl(&c, "CREATE TABLE X (a INT REFERENCES Ghost(g))", 3),
            Err(CatalogError::UnresolvedName(_))
        ));
    }

    #[test]
    fn versioning_and_intervals() {
        let mut h = CatalogHistory::new(Catalog::default());
        let c1 = ddl(h.current(), "CREATE TABLE T (a INT)", 1).unwrap();
        h.push(1, c1);
        let c2 = ddl(h.current(), "CREATE TRIGGER tr AFTER INSERT ON T BEGIN DELETE FROM T WHERE a = NEW.a; END", 3).unwrap();
        h.push(3, c2);
        let c3 = ddl(h.current(), "DROP TRIGGER tr", 7).unwrap();
        h.push(7, c3);
        assert!(h.as_of(2).triggers.is_empty());
        assert!(h.as_of(5).triggers.contains_key("tr"));
        assert!(h.as_of(9).triggers.is_empty());
        let iv = h.trigger_intervals[0].2;
        assert_eq!(iv, TriggerInterval { create_idx: 3, drop_idx: Some(7) });
        assert!(iv.alive_at(4) && !iv.alive_at(3) && !iv.alive_at(7));
        assert_eq!(ddl(h.current(), "DROP TRIGGER tr", 8), Err(CatalogError::DropMissing("tr".into())));
    }

    #[test]
    fn view_of_view_closure() {
        let c = Catalog::default();
        let c = ddl(&c, "CREATE TABLE T (a INT, b INT, c INT)", 1).unwrap();
        let c = ddl(&c, "CREATE TABLE S (k INT, v INT)", 2).unwrap();
        let c = ddl(&c, "CREATE VIEW V1 AS SELECT a, v FROM T JOIN S ON T.b = S.k", 3).unwrap();
        let c = ddl(&c, "CREATE VIEW V2 AS SELECT a FROM V1 WHERE v = 1", 4).unwrap();
        let expect: BTreeSet<ColumnRef> =
            [("T", "a"), ("T", "b"), ("S", "k"), ("S", "v")].iter().map(|(t, c)| ColumnRef::new(t, c)).collect();
        assert_eq!(c.views["V1"].base_columns, expect);
        assert_eq!(c.views["V2"].base_columns, expect);
    }
}
