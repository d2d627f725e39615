use alloc::boxed::Box;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt::{self, Write};

use crate::value::{ScalarType, Value};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum NondetFn {
    CurTime,
    Now,
    Rand,
}

impl NondetFn {
    pub fn name(&self) -> &'static str {
        match self {
            NondetFn::CurTime => "CURTIME",
            NondetFn::Now => "NOW",
            NondetFn::Rand => "RAND",
        }
    }

    pub fn from_name(s: &str) -> Option<NondetFn> {
        match s.to_ascii_uppercase().as_str() {
            "CURTIME" => Some(NondetFn::CurTime),
            "NOW" => Some(NondetFn::Now),
            "RAND" => Some(NondetFn::Rand),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Mod,
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
    And,
    Or,
}

impl BinOp {
    fn symbol(&self) -> &'static str {
        match self {
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
            BinOp::Div => "/",
            BinOp::Mod => "%",
            BinOp::Eq => "=",
            BinOp::Ne => "<>",
            BinOp::Lt => "<",
            BinOp::Le => "<=",
            BinOp::Gt => ">",
            BinOp::Ge => ">=",
            BinOp::And => "AND",
            BinOp::Or => "OR",
        }
    }

    fn precedence(&self) -> u8 {
        match self {
            BinOp::Or => 1,
            BinOp::And => 2,
            BinOp::Eq | BinOp::Ne | BinOp::Lt | BinOp::Le | BinOp::Gt | BinOp::Ge => 4,
            BinOp::Add | BinOp::Sub => 5,
            BinOp::Mul | BinOp::Div | BinOp::Mod => 6,
        }
    }

    pub fn is_comparison(&self) -> bool {
        matches!(self, BinOp::Eq | BinOp::Ne | BinOp::Lt | BinOp::Le | BinOp::Gt | BinOp::Ge)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AggFn {
    Count,
    Sum,
    Min,
    Max,
}

impl AggFn {
    fn name(&self) -> &'static str {
        match self {
            AggFn::Count => "COUNT",
            AggFn::Sum => "SUM",
            AggFn::Min => "MIN",
            AggFn::Max => "MAX",
        }
    }
}

/// Column reference; `table` is filled in by resolution.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ColName {
    pub table: Option<String>,
    pub column: String,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Lit(Value),
    Col(ColName),
    /// Procedure parameter or DECLAREd variable.
    Var(String),
    /// NEW.col (true) or OLD.col (false) inside a trigger body.
    Row(bool, String),
    Nondet(NondetFn),
    Neg(Box<Expr>),
    Not(Box<Expr>),
    Bin(BinOp, Box<Expr>, Box<Expr>),
    InList(Box<Expr>, Vec<Expr>),
    Between(Box<Expr>, Box<Expr>, Box<Expr>),
    IsNull(Box<Expr>, bool),
    /// COUNT(*) has no argument.
    Agg(AggFn, Option<Box<Expr>>),
    Subquery(Box<Select>),
}

impl Expr {
    pub fn bin(op: BinOp, a: Expr, b: Expr) -> Expr {
        Expr::Bin(op, Box::new(a), Box::new(b))
    }

    pub fn col(table: &str, column: &str) -> Expr {
        Expr::Col(ColName { table: Some(table.into()), column: column.into() })
    }

    /// Visit every sub-expression (not descending into subqueries).
    pub fn walk<'a>(&'a self, f: &mut dyn FnMut(&'a Expr)) {
        f(self);
        match self {
            Expr::Neg(e) | Expr::Not(e) | Expr::IsNull(e, _) => e.walk(f),
            Expr::Bin(_, a, b) => {
                a.walk(f);
                b.walk(f);
            }
            Expr::InList(e, l) => {
                e.walk(f);
                for x in l {
                    x.walk(f);
                }
            }
            Expr::Between(a, b, c) => {
                a.walk(f);
                b.walk(f);
                c.walk(f);
            }
            Expr::Agg(_, Some(e)) => e.walk(f),
            _ => {}
        }
    }

    pub fn walk_mut(&mut self, f: &mut dyn FnMut(&mut Expr)) {
        f(self);
        match self {
            Expr::Neg(e) | Expr::Not(e) | Expr::IsNull(e, _) => e.walk_mut(f),
            Expr::Bin(_, a, b) => {
                a.walk_mut(f);
                b.walk_mut(f);
            }
            Expr::InList(e, l) => {
                e.walk_mut(f);
                for x in l {
                    x.walk_mut(f);
                }
            }
            Expr::Between(a, b, c) => {
                a.walk_mut(f);
                b.walk_mut(f);
                c.walk_mut(f);
            }
            Expr::Agg(_, Some(e)) => e.walk_mut(f),
            _ => {}
        }
    }

    pub fn has_aggregate(&self) -> bool {
        let mut found = false;
        self.walk(&mut |e| {
            if matches!(e, Expr::Agg(..)) {
                found = true
            }
        });
        found
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SelectItem {
    /// `*` or `t.*`
    Star(Option<String>),
    Expr(Expr, Option<String>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Join {
    pub table: String,
    pub left: ColName,
    pub right: ColName,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Select {
    pub items: Vec<SelectItem>,
    pub from: Option<String>,
    pub joins: Vec<Join>,
    pub filter: Option<Expr>,
    pub order_by: Vec<(Expr, bool)>,
    pub limit: Option<u64>,
    pub into: Vec<String>,
}

impl Select {
    pub fn sources(&self) -> Vec<&str> {
        let mut v: Vec<&str> = self.from.iter().map(|s| s.as_str()).collect();
        v.extend(self.joins.iter().map(|j| j.table.as_str()));
        v
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FkAction {
    Restrict,
    Cascade,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ColumnDef {
    pub name: String,
    pub ty: ScalarType,
    pub primary_key: bool,
    pub auto_increment: bool,
    pub not_null: bool,
    pub default: Option<Value>,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ForeignKey {
    pub column: String,
    pub ref_table: String,
    pub ref_column: String,
    pub on_delete: FkAction,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CreateTable {
    pub name: String,
    pub columns: Vec<ColumnDef>,
    pub primary_key: Vec<String>,
    pub foreign_keys: Vec<ForeignKey>,
    pub checks: Vec<Expr>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum AlterAction {
    AddColumn(ColumnDef),
    DropColumn(String),
    AddForeignKey(ForeignKey),
    AddCheck(Expr),
}

#[derive(Debug, Clone, PartialEq)]
pub enum InsertSource {
    Values(Vec<Vec<Expr>>),
    Select(Box<Select>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Insert {
    pub table: String,
    pub columns: Option<Vec<String>>,
    pub source: InsertSource,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Update {
    pub table: String,
    pub sets: Vec<(String, Expr)>,
    pub filter: Option<Expr>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Delete {
    pub table: String,
    pub filter: Option<Expr>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Timing {
    Before,
    After,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Event {
    Insert,
    Update,
    Delete,
}

impl Event {
    pub fn name(&self) -> &'static str {
        match self {
            Event::Insert => "INSERT",
            Event::Update => "UPDATE",
            Event::Delete => "DELETE",
        }
    }
}

/// Statements allowed inside trigger and procedure bodies.
#[derive(Debug, Clone, PartialEq)]
pub enum BodyStmt {
    Declare(String, ScalarType),
    Set(String, Expr),
    Query(Statement),
    If(Vec<(Expr, Vec<BodyStmt>)>, Vec<BodyStmt>),
    Signal(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct CreateTrigger {
    pub name: String,
    pub timing: Timing,
    pub event: Event,
    pub table: String,
    pub body: Vec<BodyStmt>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CreateProcedure {
    pub name: String,
    pub params: Vec<(String, ScalarType)>,
    pub body: Vec<BodyStmt>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Statement {
    CreateTable(CreateTable),
    AlterTable(String, AlterAction),
    DropTable(String),
    TruncateTable(String),
    CreateView { name: String, or_replace: bool, query: Box<Select> },
    DropView(String),
    Select(Box<Select>),
    Insert(Insert),
    Update(Update),
    Delete(Delete),
    CreateTrigger(CreateTrigger),
    DropTrigger(String),
    TransactionBlock(Vec<Statement>),
    CreateProcedure(CreateProcedure),
    CallProcedure(String, Vec<Expr>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StatementKind {
    CreateTable,
    AlterTable,
    DropTable,
    TruncateTable,
    CreateView,
    DropView,
    Select,
    Insert,
    Update,
    Delete,
    CreateTrigger,
    DropTrigger,
    TransactionBlock,
    CreateProcedure,
    CallProcedure,
}

impl Statement {
    pub fn kind(&self) -> StatementKind {
        match self {
            Statement::CreateTable(_) => StatementKind::CreateTable,
            Statement::AlterTable(..) => StatementKind::AlterTable,
            Statement::DropTable(_) => StatementKind::DropTable,
            Statement::TruncateTable(_) => StatementKind::TruncateTable,
            Statement::CreateView { .. } => StatementKind::CreateView,
            Statement::DropView(_) => StatementKind::DropView,
            Statement::Select(_) => StatementKind::Select,
            Statement::Insert(_) => StatementKind::Insert,
            Statement::Update(_) => StatementKind::Update,
            Statement::Delete(_) => StatementKind::Delete,
            Statement::CreateTrigger(_) => StatementKind::CreateTrigger,
            Statement::DropTrigger(_) => StatementKind::DropTrigger,
            Statement::TransactionBlock(_) => StatementKind::TransactionBlock,
            Statement::CreateProcedure(_) => StatementKind::CreateProcedure,
            Statement::CallProcedure(..) => StatementKind::CallProcedure,
        }
    }

    /// Catalog-changing statements. TRUNCATE counts: it is applied like DDL.
    pub fn is_ddl(&self) -> bool {
        matches!(
            self,
            Statement::CreateTable(_)
                | Statement::AlterTable(..)
                | Statement::DropTable(_)
                | Statement::TruncateTable(_)
                | Statement::CreateView { .. }
                | Statement::DropView(_)
                | Statement::CreateTrigger(_)
                | Statement::DropTrigger(_)
                | Statement::CreateProcedure(_)
        )
    }
}

// ---------------------------------------------------------------- printing

fn ident(f: &mut impl Write, s: &str) -> fmt::Result {
    f.write_str(s)
}

fn write_list<T>(
    f: &mut fmt::Formatter<'_>,
    items: &[T],
    mut each: impl FnMut(&mut fmt::Formatter<'_>, &T) -> fmt::Result,
) -> fmt::Result {
    for (i, it) in items.iter().enumerate() {
        if i > 0 {
            f.write_str(", ")?;
        }
        each(f, it)?;
    }
    Ok(())
}

impl fmt::Display for ColName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(t) = &self.table {
            write!(f, "{}.", t)?;
        }
        ident(f, &self.column)
    }
}

impl Expr {
    fn prec(&self) -> u8 {
        match self {
            Expr::Bin(op, ..) => op.precedence(),
            Expr::Not(_) => 3,
            Expr::InList(..) | Expr::Between(..) | Expr::IsNull(..) => 4,
            _ => 9,
        }
    }

    fn fmt_child(&self, f: &mut fmt::Formatter<'_>, min: u8) -> fmt::Result {
        if self.prec() < min {
            write!(f, "({})", self)
        } else {
            write!(f, "{}", self)
        }
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Lit(v) => f.write_str(&v.to_sql()),
            Expr::Col(c) => write!(f, "{}", c),
            Expr::Var(v) => f.write_str(v),
            Expr::Row(new, c) => write!(f, "{}.{}", if *new { "NEW" } else { "OLD" }, c),
            Expr::Nondet(n) => write!(f, "{}()", n.name()),
            Expr::Neg(e) => {
                f.write_str("-")?;
                e.fmt_child(f, 9)
            }
            Expr::Not(e) => {
                f.write_str("NOT ")?;
                e.fmt_child(f, 4)
            }
            Expr::Bin(op, a, b) => {
                let p = op.precedence();
                a.fmt_child(f, p)?;
                write!(f, " {} ", op.symbol())?;
                // left-associative: the right operand needs strictly higher precedence
                b.fmt_child(f, p + 1)
            }
            Expr::InList(e, l) => {
                e.fmt_child(f, 5)?;
                f.write_str(" IN (")?;
                write_list(f, l, |f, x| write!(f, "{}", x))?;
                f.write_str(")")
            }
            Expr::Between(a, lo, hi) => {
                a.fmt_child(f, 5)?;
                f.write_str(" BETWEEN ")?;
                lo.fmt_child(f, 5)?;
                f.write_str(" AND ")?;
                hi.fmt_child(f, 5)
            }
            Expr::IsNull(e, neg) => {
                e.fmt_child(f, 5)?;
                f.write_str(if *neg { " IS NOT NULL" } else { " IS NULL" })
            }
            Expr::Agg(a, None) => write!(f, "{}(*)", a.name()),
            Expr::Agg(a, Some(e)) => write!(f, "{}({})", a.name(), e),
            Expr::Subquery(s) => write!(f, "({})", s),
        }
    }
}

impl fmt::Display for Select {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("SELECT ")?;
        write_list(f, &self.items, |f, it| match it {
            SelectItem::Star(None) => f.write_str("*"),
            SelectItem::Star(Some(t)) => write!(f, "{}.*", t),
            SelectItem::Expr(e, None) => write!(f, "{}", e),
            SelectItem::Expr(e, Some(a)) => write!(f, "{} AS {}", e, a),
        })?;
        if !self.into.is_empty() {
            f.write_str(" INTO ")?;
            write_list(f, &self.into, |f, v| f.write_str(v))?;
        }
        if let Some(t) = &self.from {
            write!(f, " FROM {}", t)?;
        }
        for j in &self.joins {
            write!(f, " JOIN {} ON {} = {}", j.table, j.left, j.right)?;
        }
        if let Some(w) = &self.filter {
            write!(f, " WHERE {}", w)?;
        }
        if !self.order_by.is_empty() {
            f.write_str(" ORDER BY ")?;
            write_list(f, &self.order_by, |f, (e, desc)| {
                write!(f, "{}{}", e, if *desc { " DESC" } else { "" })
            })?;
        }
        if let Some(l) = self.limit {
            write!(f, " LIMIT {}", l)?;
        }
        Ok(())
    }
}

impl fmt::Display for ColumnDef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {}", self.name, self.ty)?;
        if self.not_null {
            f.write_str(" NOT NULL")?;
        }
        if let Some(d) = &self.default {
            write!(f, " DEFAULT {}", d.to_sql())?;
        }
        if self.auto_increment {
            f.write_str(" AUTO_INCREMENT")?;
        }
        if self.primary_key {
            f.write_str(" PRIMARY KEY")?;
        }
        Ok(())
    }
}

impl fmt::Display for ForeignKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "FOREIGN KEY ({}) REFERENCES {}({})", self.column, self.ref_table, self.ref_column)?;
        if self.on_delete == FkAction::Cascade {
            f.write_str(" ON DELETE CASCADE")?;
        }
        Ok(())
    }
}

fn fmt_body(f: &mut fmt::Formatter<'_>, body: &[BodyStmt]) -> fmt::Result {
    for s in body {
        write!(f, " {}", s)?;
    }
    Ok(())
}

impl fmt::Display for BodyStmt {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BodyStmt::Declare(n, t) => write!(f, "DECLARE {} {};", n, t),
            BodyStmt::Set(n, e) => write!(f, "SET {} = {};", n, e),
            BodyStmt::Query(q) => write!(f, "{};", q),
            BodyStmt::Signal(m) => write!(f, "SIGNAL SQLSTATE '45000' SET MESSAGE_TEXT = {};", Value::text(m).to_sql()),
            BodyStmt::If(branches, els) => {
                for (i, (c, b)) in branches.iter().enumerate() {
                    write!(f, "{} {} THEN", if i == 0 { "IF" } else { " ELSEIF" }, c)?;
                    fmt_body(f, b)?;
                }
                if !els.is_empty() {
                    f.write_str(" ELSE")?;
                    fmt_body(f, els)?;
                }
                f.write_str(" END IF;")
            }
        }
    }
}

impl fmt::Display for Statement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Statement::CreateTable(ct) => {
                write!(f, "CREATE TABLE {} (", ct.name)?;
                write_list(f, &ct.columns, |f, c| write!(f, "{}", c))?;
                if !ct.primary_key.is_empty() {
                    f.write_str(", PRIMARY KEY (")?;
                    write_list(f, &ct.primary_key, |f, c| f.write_str(c))?;
                    f.write_str(")")?;
                }
                for fk in &ct.foreign_keys {
                    write!(f, ", {}", fk)?;
                }
                for c in &ct.checks {
                    write!(f, ", CHECK ({})", c)?;
                }
                f.write_str(")")
            }
            Statement::AlterTable(t, a) => {
                write!(f, "ALTER TABLE {} ", t)?;
                match a {
                    AlterAction::AddColumn(c) => write!(f, "ADD COLUMN {}", c),
                    AlterAction::DropColumn(c) => write!(f, "DROP COLUMN {}", c),
                    AlterAction::AddForeignKey(fk) => write!(f, "ADD {}", fk),
                    AlterAction::AddCheck(e) => write!(f, "ADD CHECK ({})", e),
                }
            }
            Statement::DropTable(t) => write!(f, "DROP TABLE {}", t),
            Statement::TruncateTable(t) => write!(f, "TRUNCATE TABLE {}", t),
            Statement::CreateView { name, or_replace, query } => write!(
                f,
                "CREATE {}VIEW {} AS {}",
                if *or_replace { "OR REPLACE " } else { "" },
                name,
                query
            ),
            Statement::DropView(v) => write!(f, "DROP VIEW {}", v),
            Statement::Select(s) => write!(f, "{}", s),
            Statement::Insert(i) => {
                write!(f, "INSERT INTO {}", i.table)?;
                if let Some(cols) = &i.columns {
                    f.write_str(" (")?;
                    write_list(f, cols, |f, c| f.write_str(c))?;
                    f.write_str(")")?;
                }
                match &i.source {
                    InsertSource::Values(rows) => {
                        f.write_str(" VALUES ")?;
                        write_list(f, rows, |f, r| {
                            f.write_str("(")?;
                            write_list(f, r, |f, e| write!(f, "{}", e))?;
                            f.write_str(")")
                        })
                    }
                    InsertSource::Select(s) => write!(f, " {}", s),
                }
            }
            Statement::Update(u) => {
                write!(f, "UPDATE {} SET ", u.table)?;
                write_list(f, &u.sets, |f, (c, e)| write!(f, "{} = {}", c, e))?;
                if let Some(w) = &u.filter {
                    write!(f, " WHERE {}", w)?;
                }
                Ok(())
            }
            Statement::Delete(d) => {
                write!(f, "DELETE FROM {}", d.table)?;
                if let Some(w) = &d.filter {
                    write!(f, " WHERE {}", w)?;
                }
                Ok(())
            }
            Statement::CreateTrigger(t) => {
                let timing = match t.timing {
                    Timing::Before => "BEFORE",
                    Timing::After => "AFTER",
                };
                write!(
                    f,
                    "CREATE TRIGGER {} {} {} ON {} FOR EACH ROW BEGIN",
                    t.name,
                    timing,
                    t.event.name(),
                    t.table
                )?;
                fmt_body(f, &t.body)?;
                f.write_str(" END")
            }
            Statement::DropTrigger(t) => write!(f, "DROP TRIGGER {}", t),
            Statement::TransactionBlock(stmts) => {
                f.write_str("BEGIN;")?;
                for s in stmts {
                    write!(f, " {};", s)?;
                }
                f.write_str(" COMMIT")
            }
            Statement::CreateProcedure(p) => {
                write!(f, "CREATE PROCEDURE {}(", p.name)?;
                write_list(f, &p.params, |f, (n, t)| write!(f, "IN {} {}", n, t))?;
                f.write_str(") BEGIN")?;
                fmt_body(f, &p.body)?;
                f.write_str(" END")
            }
            Statement::CallProcedure(p, args) => {
                write!(f, "CALL {}(", p)?;
                write_list(f, args, |f, a| write!(f, "{}", a))?;
                f.write_str(")")
            }
        }
    }
}
