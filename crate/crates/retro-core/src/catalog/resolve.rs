//! Name resolution: qualify every column reference with its source.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use super::{source_columns, Catalog};
use crate::error::SqlError;
use crate::sql::*;

#[derive(Debug, Clone, Default)]
pub struct Ctx {
    pub vars: BTreeSet<String>,
    pub trigger: Option<(String, Event)>,
}

fn unresolved(s: impl Into<String>) -> SqlError {
    SqlError::UnresolvedName(s.into())
}

pub fn resolve_statement(stmt: &mut Statement, cat: &Catalog) -> Result<(), SqlError> {
    resolve_in(stmt, cat, &Ctx::default())
}

fn base_table<'a>(cat: &'a Catalog, name: &str) -> Result<&'a super::TableSchema, SqlError> {
    if cat.views.contains_key(name) {
        return Err(SqlError::UnsupportedFeature(format!("writing through view {}", name)));
    }
    cat.tables.get(name).map(|t| t.as_ref()).ok_or_else(|| unresolved(name))
}

fn resolve_in(stmt: &mut Statement, cat: &Catalog, ctx: &Ctx) -> Result<(), SqlError> {
    match stmt {
        Statement::Select(s) => {
            resolve_select(s, cat, ctx, &[])?;
            if !s.into.is_empty() {
                for v in &s.into {
                    if !ctx.vars.contains(v) {
                        return Err(unresolved(v.clone()));
                    }
                }
                if s.items.len() != s.into.len() || s.items.iter().any(|i| matches!(i, SelectItem::Star(_))) {
                    return Err(SqlError::UnsupportedFeature("SELECT … INTO arity mismatch".into()));
                }
            }
            Ok(())
        }
        Statement::Insert(ins) => {
            let t = base_table(cat, &ins.table)?;
            let width = match &ins.columns {
                Some(cols) => {
                    let mut seen = BTreeSet::new();
                    for c in cols {
                        if t.col_index(c).is_none() {
                            return Err(unresolved(format!("{}.{}", ins.table, c)));
                        }
                        if !seen.insert(c.clone()) {
                            return Err(unresolved(format!("duplicate column {}", c)));
                        }
                    }
                    cols.len()
                }
                None => t.columns.len(),
            };
            match &mut ins.source {
                InsertSource::Values(rows) => {
                    for r in rows.iter_mut() {
                        if r.len() != width {
                            return Err(unresolved(format!("{} values for {} columns", r.len(), width)));
                        }
                        for e in r.iter_mut() {
                            resolve_expr(e, cat, ctx, &[])?;
                        }
                    }
                }
                InsertSource::Select(s) => {
                    resolve_select(s, cat, ctx, &[])?;
                    let n = output_columns(s, cat).map(|c| c.len()).unwrap_or(s.items.len());
                    if n != width {
                        return Err(unresolved(format!("{} values for {} columns", n, width)));
                    }
                }
            }
            Ok(())
        }
        Statement::Update(u) => {
            let t = base_table(cat, &u.table)?;
            for (c, _) in &u.sets {
                if t.col_index(c).is_none() {
                    return Err(unresolved(format!("{}.{}", u.table, c)));
                }
            }
            let scope = alloc::vec![alloc::vec![u.table.clone()]];
            for (_, e) in u.sets.iter_mut() {
                resolve_expr(e, cat, ctx, &scope)?;
            }
            if let Some(f) = &mut u.filter {
                resolve_expr(f, cat, ctx, &scope)?;
            }
            Ok(())
        }
        Statement::Delete(d) => {
            base_table(cat, &d.table)?;
            let scope = alloc::vec![alloc::vec![d.table.clone()]];
            if let Some(f) = &mut d.filter {
                resolve_expr(f, cat, ctx, &scope)?;
            }
            Ok(())
        }
        Statement::TransactionBlock(stmts) => {
            for s in stmts {
                resolve_in(s, cat, ctx)?;
            }
            Ok(())
        }
        Statement::CallProcedure(p, args) => {
            let def = cat.procedures.get(p).ok_or_else(|| unresolved(p.clone()))?;
            if def.params.len() != args.len() {
                return Err(unresolved(format!("{} expects {} arguments", p, def.params.len())));
            }
            for a in args {
                resolve_expr(a, cat, ctx, &[])?;
            }
            Ok(())
        }
        Statement::CreateView { query, .. } => {
            let mut q = (**query).clone();
            resolve_select(&mut q, cat, ctx, &[])
        }
        Statement::CreateTrigger(t) => {
            if !cat.tables.contains_key(&t.table) {
                return Err(unresolved(t.table.clone()));
            }
            let mut body = t.body.clone();
            resolve_body(&mut body, cat, Ctx { trigger: Some((t.table.clone(), t.event)), ..Ctx::default() })
        }
        Statement::CreateProcedure(p) => {
            let mut body = p.body.clone();
            let mut c = Ctx::default();
            c.vars.extend(p.params.iter().map(|(n, _)| n.clone()));
            resolve_body(&mut body, cat, c)
        }
        Statement::AlterTable(t, _) | Statement::TruncateTable(t) => {
            base_table(cat, t)?;
            Ok(())
        }
        Statement::DropTable(t) => {
            if !cat.tables.contains_key(t) {
                return Err(unresolved(t.clone()));
            }
            Ok(())
        }
        Statement::DropView(v) => {
            if !cat.views.contains_key(v) {
                return Err(unresolved(v.clone()));
            }
            Ok(())
        }
        Statement::DropTrigger(t) => {
            if !cat.triggers.contains_key(t) {
                return Err(unresolved(t.clone()));
            }
            Ok(())
        }
        Statement::CreateTable(_) => Ok(()),
    }
}

pub fn resolve_body(body: &mut [BodyStmt], cat: &Catalog, mut ctx: Ctx) -> Result<(), SqlError> {
    resolve_body_in(body, cat, &mut ctx)
}

fn resolve_body_in(body: &mut [BodyStmt], cat: &Catalog, ctx: &mut Ctx) -> Result<(), SqlError> {
    for s in body {
        match s {
            BodyStmt::Declare(n, _) => {
                ctx.vars.insert(n.clone());
            }
            BodyStmt::Set(n, e) => {
                if !ctx.vars.contains(n) {
                    return Err(unresolved(n.clone()));
                }
                resolve_expr(e, cat, ctx, &[])?;
            }
            BodyStmt::Query(q) => resolve_in(q, cat, ctx)?,
            BodyStmt::If(branches, els) => {
                for (c, b) in branches {
                    resolve_expr(c, cat, ctx, &[])?;
                    resolve_body_in(b, cat, ctx)?;
                }
                resolve_body_in(els, cat, ctx)?;
            }
            BodyStmt::Signal(_) => {}
        }
    }
    Ok(())
}

/// Output column names of a resolved select.
pub fn output_columns(q: &Select, cat: &Catalog) -> Result<Vec<String>, SqlError> {
    let mut out = Vec::new();
    for it in &q.items {
        match it {
            SelectItem::Star(None) => {
                for s in q.sources() {
                    out.extend(source_columns(cat, s).ok_or_else(|| unresolved(s))?);
                }
            }
            SelectItem::Star(Some(t)) => out.extend(source_columns(cat, t).ok_or_else(|| unresolved(t.clone()))?),
            SelectItem::Expr(_, Some(a)) => out.push(a.clone()),
            SelectItem::Expr(Expr::Col(c), None) => out.push(c.column.clone()),
            SelectItem::Expr(e, None) => out.push(format!("{}", e)),
        }
    }
    Ok(out)
}

pub fn resolve_select(q: &mut Select, cat: &Catalog, ctx: &Ctx, outer: &[Vec<String>]) -> Result<(), SqlError> {
    let sources: Vec<String> = q.sources().iter().map(|s| String::from(*s)).collect();
    for (i, s) in sources.iter().enumerate() {
        if !cat.has_name(s) {
            return Err(unresolved(s.clone()));
        }
        if sources[..i].contains(s) {
            return Err(SqlError::UnsupportedFeature("self-join".into()));
        }
    }
    let mut scopes: Vec<Vec<String>> = outer.to_vec();
    scopes.push(sources.clone());
    for it in q.items.iter_mut() {
        match it {
            SelectItem::Star(Some(t)) => {
                if !sources.contains(t) {
                    return Err(unresolved(format!("{}.*", t)));
                }
            }
            SelectItem::Star(None) => {
                if sources.is_empty() {
                    return Err(unresolved("*"));
                }
            }
            SelectItem::Expr(e, _) => resolve_expr(e, cat, ctx, &scopes)?,
        }
    }
    for (k, j) in q.joins.iter_mut().enumerate() {
        // ON may reference the joined table and anything before it
        let visible = &sources[..k + 2];
        for c in [&mut j.left, &mut j.right] {
            qualify(c, cat, &[visible.to_vec()])?;
        }
    }
    if let Some(f) = &mut q.filter {
        resolve_expr(f, cat, ctx, &scopes)?;
    }
    for (e, _) in q.order_by.iter_mut() {
        resolve_expr(e, cat, ctx, &scopes)?;
    }
    let aggs = q.items.iter().filter(|i| matches!(i, SelectItem::Expr(e, _) if e.has_aggregate())).count();
    if aggs > 0 {
        let plain_cols = q.items.iter().any(|i| match i {
            SelectItem::Star(_) => true,
            SelectItem::Expr(e, _) => {
                let mut bare = false;
                if !e.has_aggregate() {
                    e.walk(&mut |x| {
                        if matches!(x, Expr::Col(_)) {
                            bare = true
                        }
                    });
                }
                bare
            }
        });
        if plain_cols {
            return Err(SqlError::UnsupportedFeature("mixing aggregates and columns without GROUP BY".into()));
        }
    }
    Ok(())
}

fn qualify(c: &mut ColName, cat: &Catalog, scopes: &[Vec<String>]) -> Result<(), SqlError> {
    for scope in scopes.iter().rev() {
        match &c.table {
            Some(t) => {
                if scope.contains(t) {
                    let cols = source_columns(cat, t).unwrap_or_default();
                    if cols.contains(&c.column) {
                        return Ok(());
                    }
                    return Err(unresolved(format!("{}.{}", t, c.column)));
                }
            }
            None => {
                let hits: Vec<&String> = scope
                    .iter()
                    .filter(|s| source_columns(cat, s).is_some_and(|cols| cols.contains(&c.column)))
                    .collect();
                match hits.len() {
                    0 => continue,
                    1 => {
                        c.table = Some(hits[0].clone());
                        return Ok(());
                    }
                    _ => return Err(unresolved(format!("ambiguous column {}", c.column))),
                }
            }
        }
    }
    Err(unresolved(format!("{}", c)))
}

pub fn resolve_expr(e: &mut Expr, cat: &Catalog, ctx: &Ctx, scopes: &[Vec<String>]) -> Result<(), SqlError> {
    match e {
        Expr::Col(c) => {
            if c.table.is_none() && ctx.vars.contains(&c.column) {
                *e = Expr::Var(c.column.clone());
                return Ok(());
            }
            qualify(c, cat, scopes)
        }
        Expr::Var(v) => {
            if ctx.vars.contains(v) {
                Ok(())
            } else {
                Err(unresolved(v.clone()))
            }
        }
        Expr::Row(new, c) => {
            let Some((t, ev)) = &ctx.trigger else {
                return Err(unresolved(format!("{}.{}", if *new { "NEW" } else { "OLD" }, c)));
            };
            let ok_kind = match ev {
                Event::Insert => *new,
                Event::Delete => !*new,
                Event::Update => true,
            };
            let has = cat.tables.get(t).is_some_and(|s| s.col_index(c).is_some());
            if ok_kind && has {
                Ok(())
            } else {
                Err(unresolved(format!("{}.{}", if *new { "NEW" } else { "OLD" }, c)))
            }
        }
        Expr::Subquery(s) => {
            resolve_select(s, cat, ctx, scopes)?;
            if s.items.len() != 1 || matches!(s.items[0], SelectItem::Star(_)) || !s.into.is_empty() {
                return Err(SqlError::UnsupportedFeature("subquery must yield one column".into()));
            }
            Ok(())
        }
        Expr::Lit(_) | Expr::Nondet(_) => Ok(()),
        Expr::Neg(x) | Expr::Not(x) | Expr::IsNull(x, _) => resolve_expr(x, cat, ctx, scopes),
        Expr::Agg(_, a) => match a {
            Some(x) => resolve_expr(x, cat, ctx, scopes),
            None => Ok(()),
        },
        Expr::Bin(_, a, b) => {
            resolve_expr(a, cat, ctx, scopes)?;
            resolve_expr(b, cat, ctx, scopes)
        }
        Expr::InList(x, l) => {
            resolve_expr(x, cat, ctx, scopes)?;
            for y in l {
                resolve_expr(y, cat, ctx, scopes)?;
            }
            Ok(())
        }
        Expr::Between(a, b, c) => {
            resolve_expr(a, cat, ctx, scopes)?;
            resolve_expr(b, cat, ctx, scopes)?;
            resolve_expr(c, cat, ctx, scopes)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::apply_ddl;
    use crate::sql::{parse, parse_statement};

    fn bank() -> Catalog {
        let mut c = Catalog::default();
        for (i, s) in [
            "CREATE TABLE Users (uid TEXT PRIMARY KEY, ssn TEXT)",
            "CREATE TABLE Accounts (aid INT PRIMARY KEY, uid TEXT REFERENCES Users(uid), balance INT)",
        ]
        .iter()
        .enumerate()
        {
            c = apply_ddl(&c, &parse(s).unwrap(), i as u64 + 1).unwrap();
        }
        c
    }

    #[test]
    fn qualifies_columns() {
        let c = bank();
        let s = parse_statement("SELECT balance FROM Accounts WHERE aid = 1", &c, 3).unwrap();
        let printed = format!("{}", s);
        assert_eq!(printed, "SELECT Accounts.balance FROM Accounts WHERE Accounts.aid = 1");
    }

    #[test]
    fn unresolved_table() {
        let c = bank();
        assert_eq!(
            parse_statement("INSERT INTO NoSuchTable VALUES (1)", &c, 3),
            Err(SqlError::UnresolvedName("NoSuchTable".into()))
        );
        assert!(parse_statement("SELECT nope FROM Users", &c, 3).is_err());
    }

    #[test]
    fn correlated_subquery() {
        let c = bank();
        let s = parse_statement(
            "UPDATE Accounts SET balance = (SELECT COUNT(*) FROM Users WHERE Users.uid = Accounts.uid)",
            &c,
            3,
        )
        .unwrap();
        assert!(format!("{}", s).contains("Users.uid = Accounts.uid"));
    }

    #[test]
    fn procedure_variables() {
        let c = bank();
        let p = parse(
            "CREATE PROCEDURE p(IN a INT) BEGIN DECLARE v INT; SELECT balance INTO v FROM Accounts WHERE aid = a; UPDATE Accounts SET balance = v + 1 WHERE aid = a; END",
        )
        .unwrap();
        let c2 = apply_ddl(&c, &p, 3).unwrap();
        let body = &c2.procedures["p"].body;
        assert!(format!("{}", body[2]).contains("Accounts.aid = a"));
        let bad = parse("CREATE PROCEDURE q() BEGIN SET v = 1; END").unwrap();
        assert!(apply_ddl(&c, &bad, 3).is_err());
    }
}
