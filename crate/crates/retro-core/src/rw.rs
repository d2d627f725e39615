//! Column-level read/write sets.
//!
//! Besides real columns, a few pseudo-columns model catalog state:
//! `X.#def` (definition of table or view X), `#events:X.insert|update|delete`
//! (the trigger set on X for an event), `#trigger:T.#def` and `#proc:P.#def`.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use crate::catalog::Catalog;
use crate::error::SqlError;
use crate::sql::*;

pub const ALL: &str = "*";
pub const DEF: &str = "#def";

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ColumnRef {
    pub table: String,
    pub column: String,
}

impl ColumnRef {
    pub fn new(table: &str, column: &str) -> Self {
        ColumnRef { table: table.into(), column: column.into() }
    }

    pub fn all(table: &str) -> Self {
        ColumnRef::new(table, ALL)
    }

    pub fn is_all(&self) -> bool {
        self.column == ALL
    }

    pub fn def(table: &str) -> Self {
        ColumnRef::new(table, DEF)
    }

    pub fn events(table: &str, ev: Event) -> Self {
        ColumnRef::new(&format!("#events:{}", table), &ev.name().to_ascii_lowercase())
    }

    pub fn trigger_def(name: &str) -> Self {
        ColumnRef::new(&format!("#trigger:{}", name), DEF)
    }

    pub fn proc_def(name: &str) -> Self {
        ColumnRef::new(&format!("#proc:{}", name), DEF)
    }

    /// True for catalog pseudo-columns.
    pub fn is_pseudo(&self) -> bool {
        self.column.starts_with('#') || self.table.starts_with('#')
    }

    /// Name of a real table or view this column belongs to, if any.
    pub fn data_table(&self) -> Option<&str> {
        if self.table.starts_with('#') {
            None
        } else {
            Some(&self.table)
        }
    }
}

impl fmt::Display for ColumnRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.table, self.column)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RWSet {
    pub reads: BTreeSet<ColumnRef>,
    pub writes: BTreeSet<ColumnRef>,
    /// Triggers whose bodies were folded in.
    pub linked: BTreeSet<String>,
}

impl RWSet {
    pub fn union_with(&mut self, o: &RWSet) {
        self.reads.extend(o.reads.iter().cloned());
        self.writes.extend(o.writes.iter().cloned());
        self.linked.extend(o.linked.iter().cloned());
    }

    pub fn is_read_only(&self) -> bool {
        self.writes.is_empty()
    }

    pub fn accesses(&self, c: &ColumnRef) -> bool {
        self.reads.contains(c) || self.writes.contains(c)
    }

    /// Real tables written (pseudo-columns excluded).
    pub fn written_tables(&self) -> BTreeSet<String> {
        self.writes.iter().filter(|c| !c.is_pseudo()).map(|c| c.table.clone()).collect()
    }

    /// Real tables read or written.
    pub fn accessed_tables(&self) -> BTreeSet<String> {
        self.reads
            .iter()
            .chain(self.writes.iter())
            .filter(|c| !c.is_pseudo())
            .map(|c| c.table.clone())
            .collect()
    }

    /// Any shared column on which at least one side writes.
    pub fn conflicts(&self, o: &RWSet) -> bool {
        self.writes.iter().any(|c| o.reads.contains(c) || o.writes.contains(c))
            || o.writes.iter().any(|c| self.reads.contains(c))
    }
}

/// Replace `t.*` markers with concrete columns of the table or view.
pub fn expand_wildcards(rw: &RWSet, cat: &Catalog) -> Result<RWSet, SqlError> {
    let exp = |s: &BTreeSet<ColumnRef>| -> Result<BTreeSet<ColumnRef>, SqlError> {
        let mut out = BTreeSet::new();
        for c in s {
            if !c.is_all() {
                out.insert(c.clone());
                continue;
            }
            let cols = crate::catalog::source_columns(cat, &c.table)
                .ok_or_else(|| SqlError::UnresolvedName(c.table.clone()))?;
            out.extend(cols.iter().map(|x| ColumnRef::new(&c.table, x)));
        }
        Ok(out)
    };
    Ok(RWSet { reads: exp(&rw.reads)?, writes: exp(&rw.writes)?, linked: rw.linked.clone() })
}

/// Read/write set of a statement executed under `cat` (the catalog in force just
/// before `at_idx`). Triggers alive in `cat` are folded into the linked statements.
pub fn extract_rw(stmt: &Statement, cat: &Catalog, at_idx: u64) -> Result<RWSet, SqlError> {
    let _ = at_idx;
    let mut a = Analyzer { cat, out: RWSet::default(), stack: Vec::new() };
    a.stmt(stmt, None);
    Ok(a.out)
}

struct Analyzer<'c> {
    cat: &'c Catalog,
    out: RWSet,
    /// Triggers and procedures currently being folded (recursion guard).
    stack: Vec<String>,
}

impl<'c> Analyzer<'c> {
    fn read(&mut self, t: &str, c: &str) {
        self.out.reads.insert(ColumnRef::new(t, c));
    }

    fn write(&mut self, t: &str, c: &str) {
        self.out.writes.insert(ColumnRef::new(t, c));
    }

    fn columns(&self, t: &str) -> Vec<String> {
        crate::catalog::source_columns(self.cat, t).unwrap_or_default()
    }

    fn write_all(&mut self, t: &str) {
        for c in self.columns(t) {
            self.write(t, &c);
        }
    }

    /// Reading column `c` of a table or view; views cascade to their base columns.
    fn read_col(&mut self, t: &str, c: &str) {
        self.read(t, c);
        self.read(t, DEF);
        if let Some(v) = self.cat.views.get(t) {
            for b in v.base_columns.iter() {
                self.out.reads.insert(b.clone());
                self.out.reads.insert(ColumnRef::def(&b.table));
            }
        }
    }

    fn expr(&mut self, e: &Expr, row_table: Option<&str>) {
        e.walk(&mut |x| match x {
            Expr::Col(c) => {
                if let Some(t) = &c.table {
                    self.read_col(t, &c.column);
                }
            }
            Expr::Row(_, c) => {
                if let Some(t) = row_table {
                    self.read(t, c);
                }
            }
            Expr::Subquery(q) => self.select(q, row_table),
            _ => {}
        });
    }

    /// Scanning a source depends on which rows exist: read its key column
    /// (every insert and delete writes all columns).
    fn read_presence(&mut self, s: &str) {
        self.read(s, DEF);
        if let Some(t) = self.cat.tables.get(s).cloned() {
            let i = t.primary_key.first().copied().unwrap_or(0);
            if let Some(c) = t.columns.get(i) {
                self.read(s, &c.name);
            }
        } else if let Some(v) = self.cat.views.get(s).cloned() {
            self.read_col(s, DEF);
            let key = format!("#view:{}", s);
            if !self.stack.contains(&key) {
                self.stack.push(key);
                for b in v.query.sources() {
                    self.read_presence(b);
                }
                self.stack.pop();
            }
        }
    }

    fn select(&mut self, q: &Select, row_table: Option<&str>) {
        for s in q.sources() {
            self.read_presence(s);
        }
        for it in &q.items {
            match it {
                SelectItem::Star(None) => {
                    for s in q.sources() {
                        for c in self.columns(s) {
                            self.read_col(s, &c);
                        }
                    }
                }
                SelectItem::Star(Some(t)) => {
                    for c in self.columns(t) {
                        self.read_col(t, &c);
                    }
                }
                SelectItem::Expr(e, _) => self.expr(e, row_table),
            }
        }
        for j in &q.joins {
            for c in [&j.left, &j.right] {
                if let Some(t) = &c.table {
                    self.read_col(t, &c.column);
                }
            }
        }
        if let Some(f) = &q.filter {
            self.expr(f, row_table);
        }
        for (e, _) in &q.order_by {
            self.expr(e, row_table);
        }
    }

    fn fold_triggers(&mut self, table: &str, ev: Event) {
        self.out.reads.insert(ColumnRef::events(table, ev));
        let trigs: Vec<_> = self
            .cat
            .triggers
            .values()
            .filter(|t| t.table == table && t.event == ev)
            .cloned()
            .collect();
        for t in trigs {
            self.out.linked.insert(t.name.clone());
            self.out.reads.insert(ColumnRef::trigger_def(&t.name));
            let key = format!("#trigger:{}", t.name);
            if self.stack.contains(&key) {
                continue;
            }
            self.stack.push(key);
            self.body(&t.body, Some(table));
            self.stack.pop();
        }
    }

    fn body(&mut self, b: &[BodyStmt], row_table: Option<&str>) {
        for s in b {
            match s {
                BodyStmt::Declare(..) | BodyStmt::Signal(_) => {}
                BodyStmt::Set(_, e) => self.expr(e, row_table),
                BodyStmt::Query(q) => self.stmt(q, row_table),
                BodyStmt::If(branches, els) => {
                    for (c, blk) in branches {
                        self.expr(c, row_table);
                        self.body(blk, row_table);
                    }
                    self.body(els, row_table);
                }
            }
        }
    }

    /// Child columns referencing written columns of `t`.
    fn propagate_to_children(&mut self, t: &str, written: &[String], cascade_all: bool) {
        for (child, fk) in self.cat.referencing(t) {
            if !written.contains(&fk.ref_column) {
                continue;
            }
            self.read(&child, &fk.column);
            self.read(&child, DEF);
            self.write(&child, &fk.column);
            if cascade_all && fk.on_delete == FkAction::Cascade && child != t {
                let key = format!("#cascade:{}", child);
                if self.stack.contains(&key) {
                    continue;
                }
                self.stack.push(key);
                self.write_all(&child);
                let cols = self.columns(&child);
                self.propagate_to_children(&child, &cols, true);
                self.stack.pop();
            }
        }
    }

    fn read_parents(&mut self, t: &str, cols: &[String]) {
        let Some(s) = self.cat.tables.get(t).cloned() else { return };
        for fk in &s.foreign_keys {
            if cols.contains(&fk.column) {
                self.read(&fk.ref_table, &fk.ref_column);
                self.read(&fk.ref_table, DEF);
            }
        }
    }

    fn stmt(&mut self, s: &Statement, row_table: Option<&str>) {
        match s {
            Statement::Select(q) => self.select(q, row_table),
            Statement::Insert(ins) => {
                let t = ins.table.as_str();
                self.read(t, DEF);
                match &ins.source {
                    InsertSource::Values(rows) => {
                        for r in rows {
                            for e in r {
                                self.expr(e, row_table);
                            }
                        }
                    }
                    InsertSource::Select(q) => self.select(q, row_table),
                }
                self.write_all(t);
                if let Some(sc) = self.cat.tables.get(t).cloned() {
                    for &i in &sc.primary_key {
                        self.read(t, &sc.columns[i].name);
                    }
                }
                let cols = self.columns(t);
                self.read_parents(t, &cols);
                self.fold_triggers(t, Event::Insert);
            }
            Statement::Update(u) => {
                let t = u.table.as_str();
                self.read_presence(t);
                for (c, e) in &u.sets {
                    self.write(t, c);
                    self.expr(e, row_table);
                }
                if let Some(f) = &u.filter {
                    self.expr(f, row_table);
                }
                let written: Vec<String> = u.sets.iter().map(|(c, _)| c.clone()).collect();
                if let Some(sc) = self.cat.tables.get(t).cloned() {
                    if written.iter().any(|c| sc.is_pk_column(c)) {
                        for &i in &sc.primary_key {
                            self.read(t, &sc.columns[i].name);
                        }
                    }
                }
                self.read_parents(t, &written);
                self.propagate_to_children(t, &written, false);
                self.fold_triggers(t, Event::Update);
            }
            Statement::Delete(d) => {
                let t = d.table.as_str();
                self.read_presence(t);
                if let Some(f) = &d.filter {
                    self.expr(f, row_table);
                }
                self.write_all(t);
                let cols = self.columns(t);
                self.propagate_to_children(t, &cols, true);
                self.fold_triggers(t, Event::Delete);
            }
            Statement::TransactionBlock(stmts) => {
                for x in stmts {
                    self.stmt(x, row_table);
                }
            }
            Statement::CallProcedure(p, args) => {
                for a in args {
                    self.expr(a, row_table);
                }
                self.out.reads.insert(ColumnRef::proc_def(p));
                let key = format!("#proc:{}", p);
                if let Some(def) = self.cat.procedures.get(p).cloned() {
                    if !self.stack.contains(&key) {
                        self.stack.push(key);
                        self.body(&def.body, None);
                        self.stack.pop();
                    }
                }
            }
            Statement::CreateTable(ct) => {
                self.write(&ct.name, DEF);
                for c in &ct.columns {
                    self.write(&ct.name, &c.name);
                }
                for fk in &ct.foreign_keys {
                    self.read(&fk.ref_table, &fk.ref_column);
                    self.read(&fk.ref_table, DEF);
                }
            }
            Statement::AlterTable(t, action) => {
                self.write(t, DEF);
                for c in self.columns(t) {
                    self.read(t, &c);
                    self.write(t, &c);
                }
                match action {
                    AlterAction::AddColumn(c) => self.write(t, &c.name),
                    AlterAction::AddForeignKey(fk) => {
                        self.read(&fk.ref_table, &fk.ref_column);
                        self.read(&fk.ref_table, DEF);
                    }
                    _ => {}
                }
            }
            Statement::DropTable(t) => {
                self.write(t, DEF);
                self.write_all(t);
                for ev in [Event::Insert, Event::Update, Event::Delete] {
                    self.out.writes.insert(ColumnRef::events(t, ev));
                }
                let trigs: Vec<String> = self.cat.triggers.values().filter(|x| &x.table == t).map(|x| x.name.clone()).collect();
                for n in trigs {
                    self.out.writes.insert(ColumnRef::trigger_def(&n));
                }
            }
            Statement::TruncateTable(t) => {
                self.read(t, DEF);
                self.write_all(t);
            }
            Statement::CreateView { name, query, .. } => {
                self.write(name, DEF);
                let mut q = (**query).clone();
                if crate::catalog::resolve::resolve_select(&mut q, self.cat, &Default::default(), &[]).is_ok() {
                    for s in q.sources() {
                        self.read(s, DEF);
                    }
                    if let Ok(cols) = crate::catalog::resolve::output_columns(&q, self.cat) {
                        for c in cols {
                            self.write(name, &c);
                        }
                    }
                }
                if let Some(old) = self.cat.views.get(name) {
                    for c in &old.columns {
                        self.write(name, c);
                    }
                }
            }
            Statement::DropView(v) => {
                self.write(v, DEF);
                self.write_all(v);
            }
            Statement::CreateTrigger(ct) => {
                self.out.writes.insert(ColumnRef::events(&ct.table, ct.event));
                self.out.writes.insert(ColumnRef::trigger_def(&ct.name));
                self.read(&ct.table, DEF);
            }
            Statement::DropTrigger(n) => {
                self.out.writes.insert(ColumnRef::trigger_def(n));
                if let Some(t) = self.cat.triggers.get(n) {
                    let (tb, ev) = (t.table.clone(), t.event);
                    self.out.writes.insert(ColumnRef::events(&tb, ev));
                }
            }
            Statement::CreateProcedure(p) => {
                self.out.writes.insert(ColumnRef::proc_def(&p.name));
            }
        }
    }
}

/// Body read/write set of a trigger as if it fired (used for trigger nodes).
pub fn trigger_body_rw(cat: &Catalog, def: &crate::catalog::TriggerDef) -> RWSet {
    let mut a = Analyzer { cat, out: RWSet::default(), stack: alloc::vec![format!("#trigger:{}", def.name)] };
    a.body(&def.body, Some(&def.table));
    a.out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::apply_ddl;
    use crate::sql::{parse, parse_statement};

    fn cat(ddl: &[&str]) -> Catalog {
        let mut c = Catalog::default();
        for (i, s) in ddl.iter().enumerate() {
            let st = parse_statement(s, &c, i as u64 + 1).unwrap();
            c = apply_ddl(&c, &st, i as u64 + 1).unwrap();
        }
        c
    }

    fn bank() -> Catalog {
        cat(&[
            "CREATE TABLE Users (uid TEXT PRIMARY KEY, ssn TEXT)",
            "CREATE TABLE Accounts (aid INT PRIMARY KEY, uid TEXT REFERENCES Users(uid), balance INT)",
            "CREATE TABLE Transactions (sender INT REFERENCES Accounts(aid), receiver INT REFERENCES Accounts(aid), amount INT)",
            "CREATE TRIGGER BalanceCheck BEFORE INSERT ON Transactions FOR EACH ROW BEGIN IF (SELECT balance FROM Accounts WHERE aid = NEW.sender) < NEW.amount THEN SIGNAL SQLSTATE '45000'; END IF; END",
        ])
    }

    fn rw(c: &Catalog, s: &str) -> RWSet {
        extract_rw(&parse_statement(s, c, 100).unwrap(), c, 100).unwrap()
    }

    fn set(v: &[&str]) -> BTreeSet<ColumnRef> {
        v.iter()
            .map(|s| {
                let (t, c) = s.rsplit_once('.').unwrap();
                ColumnRef::new(t, c)
            })
            .collect()
    }

    #[test]
    fn insert_reads_fk_parent() {
        let c = bank();
        let r = rw(&c, "INSERT INTO Accounts VALUES (0003, 'charlie', 0)");
        assert!(r.reads.contains(&ColumnRef::new("Users", "uid")));
        let data_writes: BTreeSet<_> = r.writes.iter().filter(|c| !c.is_pseudo()).cloned().collect();
        assert_eq!(data_writes, set(&["Accounts.aid", "Accounts.uid", "Accounts.balance"]));
    }

    #[test]
    fn select_has_no_writes() {
        let c = bank();
        let r = rw(&c, "SELECT balance FROM Accounts WHERE aid = 1");
        assert!(r.writes.is_empty());
        let data: BTreeSet<_> = r.reads.iter().filter(|c| !c.is_pseudo()).cloned().collect();
        assert_eq!(data, set(&["Accounts.balance", "Accounts.aid"]));
    }

    #[test]
    fn trigger_folded_into_insert() {
        let c = bank();
        let r = rw(&c, "INSERT INTO Transactions VALUES (1, 2, 100)");
        assert!(r.linked.contains("BalanceCheck"));
        assert!(r.reads.contains(&ColumnRef::new("Accounts", "balance")));
        assert!(r.reads.contains(&ColumnRef::events("Transactions", Event::Insert)));
    }

    #[test]
    fn procedure_branches_merge() {
        let c = cat(&[
            "CREATE TABLE T (k INT PRIMARY KEY, a INT, b INT)",
            "CREATE PROCEDURE P(x INT) BEGIN IF x > 0 THEN UPDATE T SET a = 1 WHERE k = x; ELSE UPDATE T SET b = 1 WHERE k = x; END IF; END",
        ]);
        let r = rw(&c, "CALL P(3)");
        assert!(r.writes.is_superset(&set(&["T.a", "T.b"])));
    }

    #[test]
    fn delete_cascades_writes() {
        let c = cat(&[
            "CREATE TABLE P (id INT PRIMARY KEY)",
            "CREATE TABLE C (id INT PRIMARY KEY, pid INT, FOREIGN KEY (pid) REFERENCES P(id) ON DELETE CASCADE)",
        ]);
        let r = rw(&c, "DELETE FROM P WHERE id = 1");
        assert!(r.writes.is_superset(&set(&["C.id", "C.pid", "P.id"])));
    }

    #[test]
    fn views_cascade_to_base() {
        let c = cat(&["CREATE TABLE T (a INT, b INT)", "CREATE VIEW V AS SELECT a FROM T"]);
        let r = rw(&c, "SELECT a FROM V");
        assert!(r.reads.contains(&ColumnRef::new("T", "a")));
        assert!(r.reads.contains(&ColumnRef::new("V", "a")));
    }

    #[test]
    fn wildcard_expansion() {
        let c = bank();
        let mut r = RWSet::default();
        r.reads.insert(ColumnRef::all("Users"));
        let e = expand_wildcards(&r, &c).unwrap();
        assert_eq!(e.reads, set(&["Users.uid", "Users.ssn"]));
        assert_eq!(expand_wildcards(&e, &c).unwrap(), e);
        let mut g = RWSet::default();
        g.reads.insert(ColumnRef::all("Ghost"));
        assert!(matches!(expand_wildcards(&g, &c), Err(SqlError::UnresolvedName(_))));
        let _ = parse("SELECT 1").unwrap();
    }
}
