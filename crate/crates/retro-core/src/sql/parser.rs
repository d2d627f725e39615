//! Recursive-descent parser for the supported dialect.
//!
//! Keywords are case-insensitive, identifiers case-sensitive, strings single-quoted.

use alloc::boxed::Box;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use super::ast::*;
use super::lexer::{lex, Tok, Token};
use crate::catalog::Catalog;
use crate::error::SqlError;
use crate::value::{parse_decimal, parse_timestamp, ScalarType, Value};

const RESERVED: &[&str] = &[
    "SELECT", "FROM", "WHERE", "AND", "OR", "NOT", "IN", "BETWEEN", "IS", "NULL", "JOIN", "INNER",
    "ON", "ORDER", "BY", "LIMIT", "INSERT", "INTO", "VALUES", "UPDATE", "SET", "DELETE", "CREATE",
    "ALTER", "DROP", "TRUNCATE", "TABLE", "VIEW", "TRIGGER", "PROCEDURE", "CALL", "BEGIN",
    "COMMIT", "END", "IF", "THEN", "ELSE", "ELSEIF", "DECLARE", "SIGNAL", "AS", "ASC", "DESC",
    "PRIMARY", "KEY", "FOREIGN", "REFERENCES", "CHECK", "DEFAULT", "UNIQUE", "GROUP", "HAVING",
    "UNION", "LEFT", "RIGHT", "OUTER", "LIKE", "CASE", "WHEN", "DISTINCT", "EXISTS",
];

/// Parse one statement (or one BEGIN…COMMIT block) without name resolution.
pub fn parse(text: &str) -> Result<Statement, SqlError> {
    let toks = lex(text)?;
    let mut p = Parser { toks, pos: 0, end: text.len() };
    let stmt = p.statement(true)?;
    p.eat_sym(";");
    if p.pos < p.toks.len() {
        return Err(p.err("end of statement"));
    }
    Ok(stmt)
}

/// Parse and resolve against the catalog state in effect at `at_idx`.
pub fn parse_statement(text: &str, catalog: &Catalog, _at_idx: u64) -> Result<Statement, SqlError> {
    let mut stmt = parse(text)?;
    crate::catalog::resolve::resolve_statement(&mut stmt, catalog)?;
    Ok(stmt)
}

struct Parser {
    toks: Vec<Token>,
    pos: usize,
    end: usize,
}

impl Parser {
    fn err(&self, expected: &str) -> SqlError {
        let pos = self.toks.get(self.pos).map(|t| t.pos).unwrap_or(self.end);
        SqlError::Syntax { pos, expected: expected.to_string() }
    }

    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|t| &t.tok)
    }

    fn peek_at(&self, n: usize) -> Option<&Tok> {
        self.toks.get(self.pos + n).map(|t| &t.tok)
    }

    fn is_kw_at(&self, n: usize, kw: &str) -> bool {
        matches!(self.peek_at(n), Some(Tok::Ident(s)) if s.eq_ignore_ascii_case(kw))
    }

    fn is_kw(&self, kw: &str) -> bool {
        self.is_kw_at(0, kw)
    }

    fn eat_kw(&mut self, kw: &str) -> bool {
        if self.is_kw(kw) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn kw(&mut self, kw: &str) -> Result<(), SqlError> {
        if self.eat_kw(kw) {
            Ok(())
        } else {
            Err(self.err(kw))
        }
    }

    fn is_sym(&self, s: &str) -> bool {
        matches!(self.peek(), Some(Tok::Sym(x)) if *x == s)
    }

    fn eat_sym(&mut self, s: &str) -> bool {
        if self.is_sym(s) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn sym(&mut self, s: &str) -> Result<(), SqlError> {
        if self.eat_sym(s) {
            Ok(())
        } else {
            Err(self.err(&format!("`{}`", s)))
        }
    }

    fn ident(&mut self) -> Result<String, SqlError> {
        match self.peek() {
            Some(Tok::Quoted(s)) => {
                let s = s.clone();
                self.pos += 1;
                Ok(s)
            }
            Some(Tok::Ident(s)) if !RESERVED.iter().any(|k| s.eq_ignore_ascii_case(k)) => {
                let s = s.clone();
                self.pos += 1;
                Ok(s)
            }
            _ => Err(self.err("identifier")),
        }
    }

    fn ident_list(&mut self) -> Result<Vec<String>, SqlError> {
        let mut v = alloc::vec![self.ident()?];
        while self.eat_sym(",") {
            v.push(self.ident()?);
        }
        Ok(v)
    }

    fn unsupported(&self, what: &str) -> SqlError {
        SqlError::UnsupportedFeature(what.to_string())
    }

    fn statement(&mut self, top: bool) -> Result<Statement, SqlError> {
        let Some(Tok::Ident(first)) = self.peek().cloned() else {
            return Err(self.err("statement keyword"));
        };
        match first.to_ascii_uppercase().as_str() {
            "SELECT" => Ok(Statement::Select(Box::new(self.select()?))),
            "INSERT" => self.insert(),
            "UPDATE" => self.update(),
            "DELETE" => self.delete(),
            "CREATE" if top => self.create(),
            "ALTER" if top => self.alter(),
            "DROP" if top => self.drop(),
            "TRUNCATE" if top => {
                self.pos += 1;
                self.eat_kw("TABLE");
                Ok(Statement::TruncateTable(self.ident()?))
            }
            "CALL" => {
                self.pos += 1;
                let name = self.ident()?;
                self.sym("(")?;
                let mut args = Vec::new();
                if !self.eat_sym(")") {
                    args.push(self.expr()?);
                    while self.eat_sym(",") {
                        args.push(self.expr()?);
                    }
                    self.sym(")")?;
                }
                Ok(Statement::CallProcedure(name, args))
            }
            "BEGIN" | "START" if top => self.block(),
            "CREATE" | "ALTER" | "DROP" | "TRUNCATE" | "BEGIN" | "START" => {
                Err(self.unsupported("DDL or nested transaction inside a block"))
            }
            "WITH" | "REPLACE" | "MERGE" | "GRANT" | "LOCK" | "EXPLAIN" | "SHOW" | "USE" => {
                Err(self.unsupported(&first))
            }
            _ => Err(self.err("statement keyword")),
        }
    }

    fn block(&mut self) -> Result<Statement, SqlError> {
        if self.eat_kw("START") {
            self.kw("TRANSACTION")?;
        } else {
            self.kw("BEGIN")?;
            self.eat_kw("TRANSACTION");
        }
        self.sym(";")?;
        let mut stmts = Vec::new();
        loop {
            if self.eat_kw("COMMIT") {
                break;
            }
            if self.is_kw("ROLLBACK") {
                return Err(self.unsupported("ROLLBACK"));
            }
            let s = self.statement(false)?;
            if matches!(s, Statement::TransactionBlock(_)) {
                return Err(self.unsupported("nested transaction"));
            }
            stmts.push(s);
            self.sym(";")?;
        }
        Ok(Statement::TransactionBlock(stmts))
    }

    fn scalar_type(&mut self) -> Result<ScalarType, SqlError> {
        let Some(Tok::Ident(name)) = self.peek().cloned() else {
            return Err(self.err("type name"));
        };
        self.pos += 1;
        let skip_len = |p: &mut Parser| -> Result<Vec<u64>, SqlError> {
            let mut v = Vec::new();
            if p.eat_sym("(") {
                loop {
                    match p.peek().cloned() {
                        Some(Tok::Number(n)) => {
                            p.pos += 1;
                            v.push(n.parse().map_err(|_| p.err("integer"))?);
                        }
                        _ => return Err(p.err("integer")),
                    }
                    if !p.eat_sym(",") {
                        break;
                    }
                }
                p.sym(")")?;
            }
            Ok(v)
        };
        match name.to_ascii_uppercase().as_str() {
            "INT" | "INTEGER" | "BIGINT" | "SMALLINT" | "INT64" => {
                skip_len(self)?;
                Ok(ScalarType::Int)
            }
            "DECIMAL" | "NUMERIC" => {
                let args = skip_len(self)?;
                let scale = args.get(1).copied().unwrap_or(0);
                if scale > 18 {
                    return Err(self.err("DECIMAL scale <= 18"));
                }
                Ok(ScalarType::Decimal { scale: scale as u8 })
            }
            "TEXT" | "VARCHAR" | "CHAR" => {
                skip_len(self)?;
                Ok(ScalarType::Text)
            }
            "TIMESTAMP" | "DATETIME" => Ok(ScalarType::Timestamp),
            "FLOAT" | "DOUBLE" | "REAL" | "BLOB" | "JSON" | "BOOLEAN" | "BOOL" | "DATE" => {
                Err(self.unsupported(&format!("type {}", name)))
            }
            _ => Err(self.err("type name")),
        }
    }

    fn literal_value(&mut self) -> Result<Value, SqlError> {
        let e = self.unary()?;
        match e {
            Expr::Lit(v) => Ok(v),
            _ => Err(self.err("literal")),
        }
    }

    fn fk_tail(&mut self, column: String) -> Result<ForeignKey, SqlError> {
        self.kw("REFERENCES")?;
        let ref_table = self.ident()?;
        self.sym("(")?;
        let ref_column = self.ident()?;
        self.sym(")")?;
        let mut on_delete = FkAction::Restrict;
        if self.eat_kw("ON") {
            if self.eat_kw("UPDATE") {
                return Err(self.unsupported("ON UPDATE actions"));
            }
            self.kw("DELETE")?;
            if self.eat_kw("CASCADE") {
                on_delete = FkAction::Cascade;
            } else if self.eat_kw("RESTRICT") {
            } else if self.eat_kw("NO") {
                self.kw("ACTION")?;
            } else {
                return Err(self.unsupported("ON DELETE action other than CASCADE/RESTRICT"));
            }
        }
        Ok(ForeignKey { column, ref_table, ref_column, on_delete })
    }

    fn column_def(&mut self, fks: &mut Vec<ForeignKey>) -> Result<ColumnDef, SqlError> {
        let name = self.ident()?;
        let ty = self.scalar_type()?;
        let mut c = ColumnDef {
            name,
            ty,
            primary_key: false,
            auto_increment: false,
            not_null: false,
            default: None,
        };
        loop {
            if self.eat_kw("PRIMARY") {
                self.kw("KEY")?;
                c.primary_key = true;
            } else if self.eat_kw("AUTO_INCREMENT") {
                c.auto_increment = true;
            } else if self.eat_kw("NOT") {
                self.kw("NULL")?;
                c.not_null = true;
            } else if self.eat_kw("NULL") {
            } else if self.eat_kw("DEFAULT") {
                c.default = Some(self.literal_value()?);
            } else if self.is_kw("REFERENCES") {
                fks.push(self.fk_tail(c.name.clone())?);
            } else if self.is_kw("UNIQUE") {
                return Err(self.unsupported("UNIQUE"));
            } else {
                break;
            }
        }
        Ok(c)
    }

    fn create(&mut self) -> Result<Statement, SqlError> {
        self.kw("CREATE")?;
        let or_replace = if self.eat_kw("OR") {
            self.kw("REPLACE")?;
            true
        } else {
            false
        };
        if self.eat_kw("TABLE") {
            let name = self.ident()?;
            self.sym("(")?;
            let mut ct = CreateTable {
                name,
                columns: Vec::new(),
                primary_key: Vec::new(),
                foreign_keys: Vec::new(),
                checks: Vec::new(),
            };
            loop {
                if self.eat_kw("CONSTRAINT") {
                    self.ident()?;
                }
                if self.eat_kw("PRIMARY") {
                    self.kw("KEY")?;
                    self.sym("(")?;
                    ct.primary_key = self.ident_list()?;
                    self.sym(")")?;
                } else if self.eat_kw("FOREIGN") {
                    self.kw("KEY")?;
                    self.sym("(")?;
                    let col = self.ident()?;
                    self.sym(")")?;
                    let fk = self.fk_tail(col)?;
                    ct.foreign_keys.push(fk);
                } else if self.eat_kw("CHECK") {
                    self.sym("(")?;
                    ct.checks.push(self.expr()?);
                    self.sym(")")?;
                } else if self.is_kw("UNIQUE") || self.is_kw("INDEX") || self.is_kw("KEY") {
                    return Err(self.unsupported("UNIQUE/INDEX constraints"));
                } else {
                    let mut fks = Vec::new();
                    let c = self.column_def(&mut fks)?;
                    ct.columns.push(c);
                    ct.foreign_keys.extend(fks);
                }
                if !self.eat_sym(",") {
                    break;
                }
            }
            self.sym(")")?;
            return Ok(Statement::CreateTable(ct));
        }
        if self.eat_kw("VIEW") {
            let name = self.ident()?;
            self.kw("AS")?;
            let query = Box::new(self.select()?);
            return Ok(Statement::CreateView { name, or_replace, query });
        }
        if or_replace {
            return Err(self.err("VIEW"));
        }
        if self.eat_kw("TRIGGER") {
            let name = self.ident()?;
            let timing = if self.eat_kw("BEFORE") {
                Timing::Before
            } else if self.eat_kw("AFTER") {
                Timing::After
            } else {
                return Err(self.err("BEFORE or AFTER"));
            };
            let event = if self.eat_kw("INSERT") {
                Event::Insert
            } else if self.eat_kw("UPDATE") {
                Event::Update
            } else if self.eat_kw("DELETE") {
                Event::Delete
            } else {
                return Err(self.err("INSERT, UPDATE or DELETE"));
            };
            self.kw("ON")?;
            let table = self.ident()?;
            if self.eat_kw("FOR") {
                self.kw("EACH")?;
                self.kw("ROW")?;
            }
            let body = self.body()?;
            return Ok(Statement::CreateTrigger(CreateTrigger { name, timing, event, table, body }));
        }
        if self.eat_kw("PROCEDURE") {
            let name = self.ident()?;
            self.sym("(")?;
            let mut params = Vec::new();
            if !self.eat_sym(")") {
                loop {
                    if self.is_kw("OUT") || self.is_kw("INOUT") {
                        return Err(self.unsupported("OUT parameters"));
                    }
                    self.eat_kw("IN");
                    let p = self.ident()?;
                    let t = self.scalar_type()?;
                    params.push((p, t));
                    if !self.eat_sym(",") {
                        break;
                    }
                }
                self.sym(")")?;
            }
            let body = self.body()?;
            return Ok(Statement::CreateProcedure(CreateProcedure { name, params, body }));
        }
        if self.is_kw("INDEX") || self.is_kw("DATABASE") || self.is_kw("FUNCTION") {
            return Err(self.unsupported("CREATE INDEX/DATABASE/FUNCTION"));
        }
        Err(self.err("TABLE, VIEW, TRIGGER or PROCEDURE"))
    }

    fn body(&mut self) -> Result<Vec<BodyStmt>, SqlError> {
        self.kw("BEGIN")?;
        let b = self.body_until(&["END"])?;
        self.kw("END")?;
        Ok(b)
    }

    fn body_until(&mut self, stops: &[&str]) -> Result<Vec<BodyStmt>, SqlError> {
        let mut out = Vec::new();
        while !stops.iter().any(|s| self.is_kw(s)) {
            if self.peek().is_none() {
                return Err(self.err(stops[0]));
            }
            out.push(self.body_stmt()?);
        }
        Ok(out)
    }

    fn body_stmt(&mut self) -> Result<BodyStmt, SqlError> {
        let s = if self.eat_kw("DECLARE") {
            let n = self.ident()?;
            let t = self.scalar_type()?;
            if self.is_kw("DEFAULT") {
                return Err(self.unsupported("DECLARE … DEFAULT"));
            }
            BodyStmt::Declare(n, t)
        } else if self.eat_kw("SET") {
            let n = self.ident()?;
            self.sym("=")?;
            BodyStmt::Set(n, self.expr()?)
        } else if self.eat_kw("SIGNAL") {
            self.kw("SQLSTATE")?;
            match self.peek() {
                Some(Tok::Str(_)) => self.pos += 1,
                _ => return Err(self.err("SQLSTATE string")),
            }
            let mut msg = String::new();
            if self.eat_kw("SET") {
                self.kw("MESSAGE_TEXT")?;
                self.sym("=")?;
                match self.peek().cloned() {
                    Some(Tok::Str(m)) => {
                        self.pos += 1;
                        msg = m;
                    }
                    _ => return Err(self.err("message string")),
                }
            }
            BodyStmt::Signal(msg)
        } else if self.eat_kw("IF") {
            let mut branches = Vec::new();
            let c = self.expr()?;
            self.kw("THEN")?;
            let b = self.body_until(&["ELSEIF", "ELSE", "END"])?;
            branches.push((c, b));
            let mut els = Vec::new();
            loop {
                if self.eat_kw("ELSEIF") {
                    let c = self.expr()?;
                    self.kw("THEN")?;
                    let b = self.body_until(&["ELSEIF", "ELSE", "END"])?;
                    branches.push((c, b));
                } else if self.eat_kw("ELSE") {
                    els = self.body_until(&["END"])?;
                } else {
                    break;
                }
            }
            self.kw("END")?;
            self.kw("IF")?;
            BodyStmt::If(branches, els)
        } else {
            let q = self.statement(false)?;
            if matches!(q, Statement::CallProcedure(..)) {
                return Err(self.unsupported("CALL inside a body"));
            }
            BodyStmt::Query(q)
        };
        self.sym(";")?;
        Ok(s)
    }

    fn alter(&mut self) -> Result<Statement, SqlError> {
        self.kw("ALTER")?;
        self.kw("TABLE")?;
        let t = self.ident()?;
        let action = if self.eat_kw("ADD") {
            if self.eat_kw("CONSTRAINT") {
                self.ident()?;
            }
            if self.eat_kw("FOREIGN") {
                self.kw("KEY")?;
                self.sym("(")?;
                let col = self.ident()?;
                self.sym(")")?;
                AlterAction::AddForeignKey(self.fk_tail(col)?)
            } else if self.eat_kw("CHECK") {
                self.sym("(")?;
                let e = self.expr()?;
                self.sym(")")?;
                AlterAction::AddCheck(e)
            } else {
                self.eat_kw("COLUMN");
                let mut fks = Vec::new();
                let c = self.column_def(&mut fks)?;
                if !fks.is_empty() || c.primary_key {
                    return Err(self.unsupported("key clauses on ADD COLUMN"));
                }
                AlterAction::AddColumn(c)
            }
        } else if self.eat_kw("DROP") {
            self.eat_kw("COLUMN");
            AlterAction::DropColumn(self.ident()?)
        } else {
            return Err(self.err("ADD or DROP"));
        };
        Ok(Statement::AlterTable(t, action))
    }

    fn drop(&mut self) -> Result<Statement, SqlError> {
        self.kw("DROP")?;
        if self.eat_kw("TABLE") {
            Ok(Statement::DropTable(self.ident()?))
        } else if self.eat_kw("VIEW") {
            Ok(Statement::DropView(self.ident()?))
        } else if self.eat_kw("TRIGGER") {
            Ok(Statement::DropTrigger(self.ident()?))
        } else if self.is_kw("PROCEDURE") {
            Err(self.unsupported("DROP PROCEDURE"))
        } else {
            Err(self.err("TABLE, VIEW or TRIGGER"))
        }
    }

    fn insert(&mut self) -> Result<Statement, SqlError> {
        self.kw("INSERT")?;
        self.kw("INTO")?;
        let table = self.ident()?;
        let columns = if self.is_sym("(") && !self.is_kw_at(1, "SELECT") {
            self.sym("(")?;
            let c = self.ident_list()?;
            self.sym(")")?;
            Some(c)
        } else {
            None
        };
        let source = if self.eat_kw("VALUES") {
            let mut rows = Vec::new();
            loop {
                self.sym("(")?;
                let mut r = alloc::vec![self.expr()?];
                while self.eat_sym(",") {
                    r.push(self.expr()?);
                }
                self.sym(")")?;
                rows.push(r);
                if !self.eat_sym(",") {
                    break;
                }
            }
            InsertSource::Values(rows)
        } else if self.is_kw("SELECT") {
            InsertSource::Select(Box::new(self.select()?))
        } else {
            return Err(self.err("VALUES or SELECT"));
        };
        if self.is_kw("ON") {
            return Err(self.unsupported("ON DUPLICATE KEY"));
        }
        Ok(Statement::Insert(Insert { table, columns, source }))
    }

    fn update(&mut self) -> Result<Statement, SqlError> {
        self.kw("UPDATE")?;
        let table = self.ident()?;
        self.kw("SET")?;
        let mut sets = Vec::new();
        loop {
            let c = self.ident()?;
            self.sym("=")?;
            sets.push((c, self.expr()?));
            if !self.eat_sym(",") {
                break;
            }
        }
        let filter = if self.eat_kw("WHERE") { Some(self.expr()?) } else { None };
        Ok(Statement::Update(Update { table, sets, filter }))
    }

    fn delete(&mut self) -> Result<Statement, SqlError> {
        self.kw("DELETE")?;
        self.kw("FROM")?;
        let table = self.ident()?;
        let filter = if self.eat_kw("WHERE") { Some(self.expr()?) } else { None };
        Ok(Statement::Delete(Delete { table, filter }))
    }

    fn col_name(&mut self) -> Result<ColName, SqlError> {
        let a = self.ident()?;
        if self.eat_sym(".") {
            Ok(ColName { table: Some(a), column: self.ident()? })
        } else {
            Ok(ColName { table: None, column: a })
        }
    }

    fn select(&mut self) -> Result<Select, SqlError> {
        self.kw("SELECT")?;
        if self.is_kw("DISTINCT") {
            return Err(self.unsupported("DISTINCT"));
        }
        let mut items = Vec::new();
        loop {
            if self.eat_sym("*") {
                items.push(SelectItem::Star(None));
            } else if matches!(self.peek(), Some(Tok::Ident(_)) | Some(Tok::Quoted(_)))
                && matches!(self.peek_at(1), Some(Tok::Sym(".")))
                && matches!(self.peek_at(2), Some(Tok::Sym("*")))
            {
                let t = self.ident()?;
                self.pos += 2;
                items.push(SelectItem::Star(Some(t)));
            } else {
                let e = self.expr()?;
                let alias = if self.eat_kw("AS") { Some(self.ident()?) } else { None };
                items.push(SelectItem::Expr(e, alias));
            }
            if !self.eat_sym(",") {
                break;
            }
        }
        let into = if self.eat_kw("INTO") { self.ident_list()? } else { Vec::new() };
        let mut from = None;
        let mut joins = Vec::new();
        if self.eat_kw("FROM") {
            from = Some(self.ident()?);
            if self.eat_sym(",") {
                return Err(self.unsupported("comma joins"));
            }
            loop {
                if self.is_kw("LEFT") || self.is_kw("RIGHT") || self.is_kw("OUTER") || self.is_kw("CROSS") {
                    return Err(self.unsupported("outer/cross joins"));
                }
                self.eat_kw("INNER");
                if !self.eat_kw("JOIN") {
                    break;
                }
                let table = self.ident()?;
                self.kw("ON")?;
                let left = self.col_name()?;
                self.sym("=")?;
                let right = self.col_name()?;
                joins.push(Join { table, left, right });
            }
        }
        let filter = if self.eat_kw("WHERE") { Some(self.expr()?) } else { None };
        if self.is_kw("GROUP") || self.is_kw("HAVING") || self.is_kw("UNION") {
            return Err(self.unsupported("GROUP BY/HAVING/UNION"));
        }
        let mut order_by = Vec::new();
        if self.eat_kw("ORDER") {
            self.kw("BY")?;
            loop {
                let e = self.expr()?;
                let desc = if self.eat_kw("DESC") {
                    true
                } else {
                    self.eat_kw("ASC");
                    false
                };
                order_by.push((e, desc));
                if !self.eat_sym(",") {
                    break;
                }
            }
        }
        let limit = if self.eat_kw("LIMIT") {
            match self.peek().cloned() {
                Some(Tok::Number(n)) => {
                    self.pos += 1;
                    Some(n.parse().map_err(|_| self.err("integer LIMIT"))?)
                }
                _ => return Err(self.err("integer LIMIT")),
            }
        } else {
            None
        };
        Ok(Select { items, from, joins, filter, order_by, limit, into })
    }

    pub fn expr(&mut self) -> Result<Expr, SqlError> {
        self.or_expr()
    }

    fn or_expr(&mut self) -> Result<Expr, SqlError> {
        let mut e = self.and_expr()?;
        while self.eat_kw("OR") {
            let r = self.and_expr()?;
            e = Expr::bin(BinOp::Or, e, r);
        }
        Ok(e)
    }

    fn and_expr(&mut self) -> Result<Expr, SqlError> {
        let mut e = self.not_expr()?;
        while self.eat_kw("AND") {
            let r = self.not_expr()?;
            e = Expr::bin(BinOp::And, e, r);
        }
        Ok(e)
    }

    fn not_expr(&mut self) -> Result<Expr, SqlError> {
        if self.eat_kw("NOT") {
            return Ok(Expr::Not(Box::new(self.not_expr()?)));
        }
        self.cmp_expr()
    }

    fn cmp_expr(&mut self) -> Result<Expr, SqlError> {
        let e = self.add_expr()?;
        let op = match self.peek() {
            Some(Tok::Sym("=")) => Some(BinOp::Eq),
            Some(Tok::Sym("<>")) => Some(BinOp::Ne),
            Some(Tok::Sym("<")) => Some(BinOp::Lt),
            Some(Tok::Sym("<=")) => Some(BinOp::Le),
            Some(Tok::Sym(">")) => Some(BinOp::Gt),
            Some(Tok::Sym(">=")) => Some(BinOp::Ge),
            _ => None,
        };
        if let Some(op) = op {
            self.pos += 1;
            let r = self.add_expr()?;
            return Ok(Expr::bin(op, e, r));
        }
        if self.is_kw("NOT") && (self.is_kw_at(1, "IN") || self.is_kw_at(1, "BETWEEN") || self.is_kw_at(1, "LIKE")) {
            return Err(self.unsupported("NOT IN/NOT BETWEEN/NOT LIKE"));
        }
        if self.eat_kw("IN") {
            self.sym("(")?;
            if self.is_kw("SELECT") {
                return Err(self.unsupported("IN (subquery)"));
            }
            let mut l = alloc::vec![self.expr()?];
            while self.eat_sym(",") {
                l.push(self.expr()?);
            }
            self.sym(")")?;
            return Ok(Expr::InList(Box::new(e), l));
        }
        if self.eat_kw("BETWEEN") {
            let lo = self.add_expr()?;
            self.kw("AND")?;
            let hi = self.add_expr()?;
            return Ok(Expr::Between(Box::new(e), Box::new(lo), Box::new(hi)));
        }
        if self.eat_kw("IS") {
            let neg = self.eat_kw("NOT");
            self.kw("NULL")?;
            return Ok(Expr::IsNull(Box::new(e), neg));
        }
        if self.is_kw("LIKE") {
            return Err(self.unsupported("LIKE"));
        }
        Ok(e)
    }

    fn add_expr(&mut self) -> Result<Expr, SqlError> {
        let mut e = self.mul_expr()?;
        loop {
            let op = if self.eat_sym("+") {
                BinOp::Add
            } else if self.eat_sym("-") {
                BinOp::Sub
            } else {
                break;
            };
            let r = self.mul_expr()?;
            e = Expr::bin(op, e, r);
        }
        Ok(e)
    }

    fn mul_expr(&mut self) -> Result<Expr, SqlError> {
        let mut e = self.unary()?;
        loop {
            let op = if self.eat_sym("*") {
                BinOp::Mul
            } else if self.eat_sym("/") {
                BinOp::Div
            } else if self.eat_sym("%") {
                BinOp::Mod
            } else {
                break;
            };
            let r = self.unary()?;
            e = Expr::bin(op, e, r);
        }
        Ok(e)
    }

    fn unary(&mut self) -> Result<Expr, SqlError> {
        if self.eat_sym("-") {
            let e = self.unary()?;
            return Ok(match e {
                Expr::Lit(Value::Int(i)) => Expr::Lit(Value::Int(-i)),
                Expr::Lit(Value::Decimal { mantissa, scale }) => {
                    Expr::Lit(Value::Decimal { mantissa: -mantissa, scale })
                }
                e => Expr::Neg(Box::new(e)),
            });
        }
        self.primary()
    }

    fn primary(&mut self) -> Result<Expr, SqlError> {
        match self.peek().cloned() {
            Some(Tok::Number(n)) => {
                self.pos += 1;
                if n.contains('.') {
                    let (m, s) = parse_decimal(&n).ok_or_else(|| self.err("numeric literal"))?;
                    Ok(Expr::Lit(Value::Decimal { mantissa: m, scale: s }))
                } else {
                    let v: i64 = n.parse().map_err(|_| self.err("64-bit integer"))?;
                    Ok(Expr::Lit(Value::Int(v)))
                }
            }
            Some(Tok::Str(s)) => {
                self.pos += 1;
                Ok(Expr::Lit(Value::text(&s)))
            }
            Some(Tok::Sym("(")) => {
                self.pos += 1;
                let e = if self.is_kw("SELECT") {
                    Expr::Subquery(Box::new(self.select()?))
                } else {
                    self.expr()?
                };
                self.sym(")")?;
                Ok(e)
            }
            Some(Tok::Ident(w)) => {
                let up = w.to_ascii_uppercase();
                if up == "NULL" {
                    self.pos += 1;
                    return Ok(Expr::Lit(Value::Null));
                }
                if up == "TIMESTAMP" && matches!(self.peek_at(1), Some(Tok::Str(_))) {
                    self.pos += 1;
                    let Some(Tok::Str(s)) = self.peek().cloned() else { unreachable!() };
                    self.pos += 1;
                    let t = parse_timestamp(&s).ok_or_else(|| self.err("timestamp literal"))?;
                    return Ok(Expr::Lit(Value::Timestamp(t)));
                }
                if matches!(self.peek_at(1), Some(Tok::Sym("("))) {
                    if let Some(nf) = NondetFn::from_name(&w) {
                        self.pos += 2;
                        self.sym(")")?;
                        return Ok(Expr::Nondet(nf));
                    }
                    let agg = match up.as_str() {
                        "COUNT" => Some(AggFn::Count),
                        "SUM" => Some(AggFn::Sum),
                        "MIN" => Some(AggFn::Min),
                        "MAX" => Some(AggFn::Max),
                        _ => None,
                    };
                    if let Some(a) = agg {
                        self.pos += 2;
                        if a == AggFn::Count && self.eat_sym("*") {
                            self.sym(")")?;
                            return Ok(Expr::Agg(a, None));
                        }
                        let e = self.expr()?;
                        self.sym(")")?;
                        return Ok(Expr::Agg(a, Some(Box::new(e))));
                    }
                    return Err(self.unsupported(&format!("function {}", w)));
                }
                if (up == "NEW" || up == "OLD") && matches!(self.peek_at(1), Some(Tok::Sym("."))) {
                    self.pos += 2;
                    let c = self.ident()?;
                    return Ok(Expr::Row(up == "NEW", c));
                }
                if up == "CASE" || up == "EXISTS" {
                    return Err(self.unsupported(&up));
                }
                Ok(Expr::Col(self.col_name()?))
            }
            Some(Tok::Quoted(_)) => Ok(Expr::Col(self.col_name()?)),
            _ => Err(self.err("expression")),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;

    fn rt(s: &str) {
        let a = parse(s).unwrap();
        let printed = a.to_string();
        let b = parse(&printed).unwrap_or_else(|e| panic!("reparse of {printed}: {e}"));
        assert_eq!(a, b, "{printed}");
    }

    #[test]
    fn bank_insert() {
        let s = parse("INSERT INTO Accounts(aid,uid,balance) VALUES (0001,'alice',100)").unwrap();
        match s {
            Statement::Insert(i) => {
                assert_eq!(i.table, "Accounts");
                match i.source {
                    InsertSource::Values(r) => {
                        assert_eq!(r.len(), 1);
                        assert_eq!(r[0][0], Expr::Lit(Value::Int(1)));
                    }
                    _ => panic!(),
                }
            }
            _ => panic!(),
        }
    }

    #[test]
    fn select_constant() {
        let s = parse("SELECT 1").unwrap();
        match s {
            Statement::Select(sel) => {
                assert!(sel.from.is_none());
                assert_eq!(sel.items.len(), 1);
            }
            _ => panic!(),
        }
    }

    #[test]
    fn roundtrips() {
        for s in [
            "CREATE TABLE Users (uid TEXT PRIMARY KEY, ssn TEXT NOT NULL DEFAULT 'x')",
            "CREATE TABLE A (aid INT AUTO_INCREMENT PRIMARY KEY, uid TEXT REFERENCES Users(uid) ON DELETE CASCADE, bal DECIMAL(10,2), CHECK (bal >= 0))",
            "SELECT a, b AS c FROM T JOIN S ON T.x = S.y WHERE a = 1 AND (b < 2 OR c IN (1, 2, 3)) ORDER BY a DESC LIMIT 5",
            "SELECT COUNT(*), SUM(x - -3) FROM T WHERE x BETWEEN 1 AND 5 + 2",
            "UPDATE T SET a = a - 1, b = RAND() WHERE k = 'q''s' AND NOT c IS NULL",
            "DELETE FROM T",
            "BEGIN; INSERT INTO T VALUES (1, NOW()); UPDATE T SET a = 2 WHERE b = 1; COMMIT",
            "CREATE TRIGGER tr BEFORE INSERT ON T FOR EACH ROW BEGIN IF (SELECT bal FROM A WHERE aid = NEW.s) < NEW.amt THEN SIGNAL SQLSTATE '45000' SET MESSAGE_TEXT = 'no'; END IF; END",
            "CREATE PROCEDURE p(IN a INT, IN b TEXT) BEGIN DECLARE v INT; SELECT bal INTO v FROM A WHERE aid = a; IF v > 1 THEN UPDATE A SET bal = v - 1 WHERE aid = a; ELSEIF v = 0 THEN DELETE FROM A WHERE aid = a; ELSE SET v = 3; END IF; END",
            "CALL p(1, 'x')",
            "CREATE OR REPLACE VIEW V AS SELECT a FROM T WHERE b = 1",
            "ALTER TABLE T ADD COLUMN z INT DEFAULT 0",
            "ALTER TABLE T ADD FOREIGN KEY (z) REFERENCES S(k)",
            "INSERT INTO T (a, b) SELECT x, y FROM S WHERE x = TIMESTAMP '2023-01-01 00:00:00'",
            "SELECT 1 - (2 - 3), (1 - 2) - 3, 2 * (3 + 4)",
            "TRUNCATE TABLE T",
        ] {
            rt(s);
        }
    }

    #[test]
    fn errors() {
        assert!(matches!(parse("SELEC 1"), Err(SqlError::Syntax { .. })));
        assert!(matches!(parse("SELECT a FROM T GROUP BY a"), Err(SqlError::UnsupportedFeature(_))));
        assert!(matches!(parse("SELECT * FROM T WHERE a LIKE 'x'"), Err(SqlError::UnsupportedFeature(_))));
        assert!(matches!(parse("CREATE TABLE T (a FLOAT)"), Err(SqlError::UnsupportedFeature(_))));
    }
}
