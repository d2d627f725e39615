//! Statement execution over an in-memory store view.

use alloc::borrow::ToOwned;
use alloc::boxed::Box;
use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;

use sha2::{Digest, Sha256};

use crate::catalog::{apply_ddl, Catalog, TableSchema};
use crate::error::ExecError;
use crate::hash::TableHash;
use crate::record::{NondetValue, QueryRecord};
use crate::sql::*;
use crate::table::{ExecEffect, Row, TableData, TableDelta};
use crate::value::{format_decimal, format_timestamp, parse_decimal, parse_timestamp, ScalarType, Value};

pub const MAX_TRIGGER_DEPTH: usize = 8;
const DIV_SCALE: u8 = 4;
const MAX_SCALE: u8 = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Regular,
    Replay,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AutoIncMode {
    #[default]
    Off,
    Tombstone,
}

#[derive(Debug, Clone, Copy)]
pub struct ExecOptions<'a> {
    pub mode: Mode,
    pub autoinc: AutoIncMode,
    /// Highest AUTO_INCREMENT value per table over the whole original history.
    pub hist_max: Option<&'a BTreeMap<String, i64>>,
    /// Ids this record was assigned originally, reused under `Tombstone`.
    pub recorded_ids: &'a [(String, i64)],
    /// In Replay mode, estimate values the log does not have instead of failing.
    pub estimate_nondet: bool,
}

impl<'a> ExecOptions<'a> {
    pub fn regular() -> Self {
        ExecOptions { mode: Mode::Regular, autoinc: AutoIncMode::Off, hist_max: None, recorded_ids: &[], estimate_nondet: true }
    }

    pub fn replay() -> Self {
        ExecOptions { mode: Mode::Replay, ..Self::regular() }
    }
}

/// A store view: catalog plus the tables this execution may see.
#[derive(Debug, Clone, Default)]
pub struct Database {
    pub catalog: Arc<Catalog>,
    pub tables: BTreeMap<String, Arc<TableData>>,
    /// Tables that may be written; `None` means all.
    pub writable: Option<BTreeSet<String>>,
}

impl Database {
    pub fn new(catalog: Arc<Catalog>) -> Self {
        Database { catalog, tables: BTreeMap::new(), writable: None }
    }

    /// Table hash under the current schema.
    pub fn table_hash(&self, name: &str) -> TableHash {
        match (self.tables.get(name), self.catalog.tables.get(name)) {
            (Some(t), Some(s)) => t.hash(s).expect("stored rows conform to schema"),
            _ => TableHash::ZERO,
        }
    }
}

/// Next AUTO_INCREMENT value. Off: max-so-far + 1. Tombstone: the recorded id
/// when there is one, otherwise above every id ever issued.
pub fn auto_increment_next(t: &TableData, mode: AutoIncMode, hist_max: Option<i64>, recorded: Option<i64>) -> i64 {
    match mode {
        AutoIncMode::Off => t.counter + 1,
        AutoIncMode::Tombstone => match recorded {
            Some(id) => id,
            None => t.counter.max(hist_max.unwrap_or(0)) + 1,
        },
    }
}

pub fn format_nondet(v: &Value) -> String {
    match v {
        Value::Timestamp(t) => format_timestamp(*t),
        Value::Decimal { mantissa, scale } => format_decimal(*mantissa, *scale),
        v => v.to_string(),
    }
}

pub fn parse_nondet(f: NondetFn, s: &str) -> Option<Value> {
    match f {
        NondetFn::CurTime | NondetFn::Now => parse_timestamp(s).map(Value::Timestamp),
        NondetFn::Rand => parse_decimal(s).map(|(m, sc)| Value::Decimal { mantissa: m, scale: sc }),
    }
}

/// Value used when the log has none: time from the record's timestamp, RAND from (idx, seq).
pub fn estimate_nondet(f: NondetFn, idx: u64, ts: i64, seq: usize) -> Value {
    match f {
        NondetFn::CurTime | NondetFn::Now => Value::Timestamp(ts),
        NondetFn::Rand => {
            let mut h = Sha256::new();
            h.update(idx.to_be_bytes());
            h.update((seq as u64).to_be_bytes());
            let d: [u8; 32] = h.finalize().into();
            let x = u64::from_be_bytes(d[..8].try_into().unwrap());
            Value::Decimal { mantissa: (x % 1_000_000) as i64, scale: 6 }
        }
    }
}

/// Execute one record. Constraint failures abort the statement and are reported
/// in the effect; the view is left unchanged in that case.
pub fn execute(db: &mut Database, rec: &QueryRecord, opts: &ExecOptions<'_>) -> Result<ExecEffect, ExecError> {
    if rec.stmt.is_ddl() {
        return exec_ddl(db, &rec.stmt, rec.idx);
    }
    let mut ex = Exec {
        db,
        opts,
        idx: rec.idx,
        ts: rec.ts,
        recorded: &rec.nondet,
        nd_pos: 0,
        eff: ExecEffect::default(),
        undo: Vec::new(),
        id_cursor: BTreeMap::new(),
        depth: 0,
    };
    let mut fr = Frame::default();
    let res = ex.top(&rec.stmt, &mut fr);
    match res {
        Ok(result) => {
            let mut eff = ex.finish();
            eff.result = result;
            Ok(eff)
        }
        Err(Fail::Abort(msg)) => {
            ex.rollback();
            let mut eff = ExecEffect::aborted(msg);
            eff.nondet = core::mem::take(&mut ex.eff.nondet);
            eff.estimated = ex.eff.estimated;
            Ok(eff)
        }
        Err(Fail::Hard(e)) => {
            ex.rollback();
            Err(e)
        }
    }
}

#[derive(Debug)]
enum Fail {
    Abort(String),
    Hard(ExecError),
}

type R<T> = Result<T, Fail>;

fn abort<T>(msg: impl Into<String>) -> R<T> {
    Err(Fail::Abort(msg.into()))
}

#[derive(Debug, Clone, Default)]
struct Frame {
    vars: BTreeMap<String, (Option<ScalarType>, Value)>,
    new: Option<(Arc<TableSchema>, Row)>,
    old: Option<(Arc<TableSchema>, Row)>,
}

struct Src {
    name: String,
    cols: Vec<String>,
}

struct Env<'a> {
    srcs: &'a [Src],
    tuple: &'a [Row],
    parent: Option<&'a Env<'a>>,
}

impl<'a> Env<'a> {
    fn lookup(&self, t: &str, c: &str) -> Option<Value> {
        for (i, s) in self.srcs.iter().enumerate() {
            if s.name == t {
                if let Some(p) = s.cols.iter().position(|x| x == c) {
                    return Some(self.tuple[i][p].clone());
                }
            }
        }
        self.parent.and_then(|p| p.lookup(t, c))
    }
}

enum Undo {
    Ins(String, Row),
    Del(String, Row),
    Counter(String, i64),
}

struct Exec<'d, 'o> {
    db: &'d mut Database,
    opts: &'o ExecOptions<'o>,
    idx: u64,
    ts: i64,
    recorded: &'o [NondetValue],
    nd_pos: usize,
    eff: ExecEffect,
    undo: Vec<Undo>,
    id_cursor: BTreeMap<String, usize>,
    depth: usize,
}

fn truth(v: &Value) -> R<Option<bool>> {
    match v {
        Value::Null => Ok(None),
        Value::Int(i) => Ok(Some(*i != 0)),
        Value::Decimal { mantissa, .. } => Ok(Some(*mantissa != 0)),
        _ => abort("type error: non-numeric condition"),
    }
}

fn bool_val(b: Option<bool>) -> Value {
    match b {
        None => Value::Null,
        Some(b) => Value::Int(b as i64),
    }
}

fn pow10(n: u8) -> i128 {
    10i128.pow(n as u32)
}

fn div_round(n: i128, d: i128) -> i128 {
    let q = n / d;
    let r = n % d;
    if 2 * r.abs() >= d.abs() {
        q + if (n < 0) == (d < 0) { 1 } else { -1 }
    } else {
        q
    }
}

fn dec(m: i128, scale: u8) -> R<Value> {
    match i64::try_from(m) {
        Ok(m) => Ok(Value::Decimal { mantissa: m, scale }),
        Err(_) => abort("numeric overflow"),
    }
}

fn arith(op: BinOp, a: &Value, b: &Value) -> R<Value> {
    if a.is_null() || b.is_null() {
        return Ok(Value::Null);
    }
    if let (Value::Int(x), Value::Int(y)) = (a, b) {
        let r = match op {
            BinOp::Add => x.checked_add(*y),
            BinOp::Sub => x.checked_sub(*y),
            BinOp::Mul => x.checked_mul(*y),
            BinOp::Mod => {
                if *y == 0 {
                    return Ok(Value::Null);
                }
                x.checked_rem(*y)
            }
            BinOp::Div => {
                if *y == 0 {
                    return Ok(Value::Null);
                }
                return dec(div_round(*x as i128 * pow10(DIV_SCALE), *y as i128), DIV_SCALE);
            }
            _ => unreachable!(),
        };
        return r.map(Value::Int).ok_or(Fail::Abort("numeric overflow".into()));
    }
    let (Some((am, sa)), Some((bm, sb))) = (a.as_numeric(), b.as_numeric()) else {
        return abort("type error: non-numeric operand");
    };
    let (am, bm) = (am as i128, bm as i128);
    let s = sa.max(sb);
    let (x, y) = (am * pow10(s - sa), bm * pow10(s - sb));
    match op {
        BinOp::Add => dec(x + y, s),
        BinOp::Sub => dec(x - y, s),
        BinOp::Mod => {
            if y == 0 {
                Ok(Value::Null)
            } else {
                dec(x % y, s)
            }
        }
        BinOp::Mul => {
            let sc = sa + sb;
            let m = am.checked_mul(bm).ok_or(Fail::Abort("numeric overflow".into()))?;
            if sc > MAX_SCALE {
                dec(div_round(m, pow10(sc - MAX_SCALE)), MAX_SCALE)
            } else {
                dec(m, sc)
            }
        }
        BinOp::Div => {
            if bm == 0 {
                return Ok(Value::Null);
            }
            let rs = (sa + DIV_SCALE).min(MAX_SCALE);
            let n = am.checked_mul(pow10(sb + rs)).ok_or(Fail::Abort("numeric overflow".into()))?;
            dec(div_round(n, bm * pow10(sa)), rs)
        }
        _ => unreachable!(),
    }
}

/// Ordering for ORDER BY and MIN/MAX: NULL first, SQL order when comparable.
fn order_cmp(a: &Value, b: &Value) -> Ordering {
    match (a.is_null(), b.is_null()) {
        (true, true) => Ordering::Equal,
        (true, false) => Ordering::Less,
        (false, true) => Ordering::Greater,
        _ => a.sql_cmp(b).unwrap_or_else(|| a.storage_cmp(b)),
    }
}

fn sql_eq(a: &Value, b: &Value) -> bool {
    a.sql_cmp(b) == Some(Ordering::Equal)
}

fn has_side_inputs(e: &Expr) -> bool {
    let mut found = false;
    e.walk(&mut |x| {
        if matches!(x, Expr::Nondet(_) | Expr::Subquery(_)) {
            found = true
        }
    });
    found
}

fn refs_table(e: &Expr, t: &str) -> bool {
    let mut found = false;
    e.walk(&mut |x| {
        if let Expr::Col(c) = x {
            if c.table.as_deref() == Some(t) {
                found = true
            }
        }
    });
    found
}

fn conjuncts<'e>(e: &'e Expr, out: &mut Vec<&'e Expr>) {
    if let Expr::Bin(BinOp::And, a, b) = e {
        conjuncts(a, out);
        conjuncts(b, out);
    } else {
        out.push(e);
    }
}

fn exact_type(v: &Value, ty: ScalarType) -> bool {
    matches!(
        (v, ty),
        (Value::Int(_), ScalarType::Int)
            | (Value::Text(_), ScalarType::Text)
            | (Value::Timestamp(_), ScalarType::Timestamp)
    ) || matches!((v, ty), (Value::Decimal { scale, .. }, ScalarType::Decimal { scale: s }) if *scale == s)
}

const REGULAR: ExecOptions<'static> =
    ExecOptions { mode: Mode::Regular, autoinc: AutoIncMode::Off, hist_max: None, recorded_ids: &[], estimate_nondet: true };

impl<'d> Exec<'d, 'static> {
    fn scratch(db: &'d mut Database, idx: u64) -> Self {
        Exec {
            db,
            opts: &REGULAR,
            idx,
            ts: 0,
            recorded: &[],
            nd_pos: 0,
            eff: ExecEffect::default(),
            undo: Vec::new(),
            id_cursor: BTreeMap::new(),
            depth: 0,
        }
    }
}

impl<'d, 'o> Exec<'d, 'o> {
    fn catalog(&self) -> Arc<Catalog> {
        self.db.catalog.clone()
    }

    fn schema(&self, t: &str) -> R<Arc<TableSchema>> {
        match self.db.catalog.tables.get(t) {
            Some(s) => Ok(s.clone()),
            None => abort(format!("no such table {}", t)),
        }
    }

    fn data(&self, t: &str) -> R<&TableData> {
        match self.db.tables.get(t) {
            Some(d) => Ok(d),
            None if self.db.catalog.tables.contains_key(t) => Err(Fail::Hard(ExecError::MissingView(t.into()))),
            None => abort(format!("no such table {}", t)),
        }
    }

    fn data_mut(&mut self, t: &str) -> R<&mut TableData> {
        if let Some(w) = &self.db.writable {
            if !w.contains(t) {
                return Err(Fail::Hard(ExecError::AccessViolation(t.into())));
            }
        }
        if !self.db.tables.contains_key(t) {
            self.data(t)?;
        }
        Ok(Arc::make_mut(self.db.tables.get_mut(t).unwrap()))
    }

    fn w_insert(&mut self, t: &str, row: Row) -> R<()> {
        self.data_mut(t)?.insert(row.clone());
        self.undo.push(Undo::Ins(t.into(), row));
        Ok(())
    }

    fn w_remove(&mut self, t: &str, row: &Row) -> R<()> {
        if self.data_mut(t)?.remove(row) {
            self.undo.push(Undo::Del(t.into(), row.clone()));
        }
        Ok(())
    }

    fn set_counter(&mut self, t: &str, v: i64) -> R<()> {
        let d = self.data_mut(t)?;
        if v > d.counter {
            let old = d.counter;
            d.counter = v;
            self.undo.push(Undo::Counter(t.into(), old));
        }
        Ok(())
    }

    fn rollback(&mut self) {
        while let Some(u) = self.undo.pop() {
            match u {
                Undo::Ins(t, r) => {
                    Arc::make_mut(self.db.tables.get_mut(&t).unwrap()).remove(&r);
                }
                Undo::Del(t, r) => Arc::make_mut(self.db.tables.get_mut(&t).unwrap()).insert(r),
                Undo::Counter(t, c) => Arc::make_mut(self.db.tables.get_mut(&t).unwrap()).counter = c,
            }
        }
    }

    fn finish(mut self) -> ExecEffect {
        let mut net: BTreeMap<String, BTreeMap<Row, i64>> = BTreeMap::new();
        for u in core::mem::take(&mut self.undo) {
            match u {
                Undo::Ins(t, r) => *net.entry(t).or_default().entry(r).or_insert(0) += 1,
                Undo::Del(t, r) => *net.entry(t).or_default().entry(r).or_insert(0) -= 1,
                Undo::Counter(t, _) => {
                    net.entry(t).or_default();
                }
            }
        }
        let mut eff = self.eff;
        for (t, rows) in net {
            let schema = self.db.catalog.tables.get(&t).cloned();
            let mut d = TableDelta { existed_before: true, exists_after: true, ..Default::default() };
            let mut h = TableHash::ZERO;
            for (r, n) in rows {
                let rh = schema
                    .as_ref()
                    .map(|s| crate::hash::row_hash(&r, s).expect("stored rows conform to schema"))
                    .unwrap_or_default();
                for _ in 0..n.unsigned_abs() {
                    if n > 0 {
                        h = h.add(rh);
                        d.inserted.push(r.clone());
                    } else {
                        h = h.sub(rh);
                        d.deleted.push(r.clone());
                    }
                }
            }
            d.hash_delta = h;
            d.counter_after = self.db.tables.get(&t).map(|x| x.counter).unwrap_or(0);
            eff.tables.insert(t, d);
        }
        eff
    }

    fn next_nondet(&mut self, f: NondetFn) -> R<Value> {
        let seq = self.nd_pos;
        self.nd_pos += 1;
        let recorded = self
            .recorded
            .get(seq)
            .filter(|r| r.func == f)
            .and_then(|r| parse_nondet(f, &r.value));
        let v = match recorded {
            Some(v) => v,
            None => {
                if self.opts.mode == Mode::Replay {
                    if !self.opts.estimate_nondet {
                        return Err(Fail::Hard(ExecError::NondetExhausted { idx: self.idx }));
                    }
                    self.eff.estimated = true;
                }
                estimate_nondet(f, self.idx, self.ts, seq)
            }
        };
        self.eff.nondet.push((f, v.clone()));
        Ok(v)
    }

    fn next_auto_id(&mut self, t: &str) -> R<i64> {
        let recorded = if self.opts.autoinc == AutoIncMode::Tombstone {
            let cur = self.id_cursor.entry(t.to_owned()).or_insert(0);
            let hit = self.opts.recorded_ids.iter().filter(|(n, _)| n == t).nth(*cur).map(|(_, id)| *id);
            if hit.is_some() {
                *cur += 1;
            }
            hit
        } else {
            None
        };
        let hist = self.opts.hist_max.and_then(|m| m.get(t).copied());
        let id = auto_increment_next(self.data(t)?, self.opts.autoinc, hist, recorded);
        self.set_counter(t, id)?;
        self.eff.auto_ids.push((t.into(), id));
        Ok(id)
    }

    // ---- expressions ----

    fn eval(&mut self, e: &Expr, env: Option<&Env<'_>>, fr: &Frame) -> R<Value> {
        match e {
            Expr::Lit(v) => Ok(v.clone()),
            Expr::Col(c) => {
                let t = c.table.as_deref().unwrap_or("");
                match env.and_then(|en| en.lookup(t, &c.column)) {
                    Some(v) => Ok(v),
                    None => abort(format!("unknown column {}", c)),
                }
            }
            Expr::Var(v) => match fr.vars.get(v) {
                Some((_, x)) => Ok(x.clone()),
                None => abort(format!("unknown variable {}", v)),
            },
            Expr::Row(is_new, c) => {
                let slot = if *is_new { &fr.new } else { &fr.old };
                match slot.as_ref().and_then(|(s, r)| s.col_index(c).map(|i| r[i].clone())) {
                    Some(v) => Ok(v),
                    None => abort(format!("no {} row column {}", if *is_new { "NEW" } else { "OLD" }, c)),
                }
            }
            Expr::Nondet(f) => self.next_nondet(*f),
            Expr::Neg(x) => match self.eval(x, env, fr)? {
                Value::Null => Ok(Value::Null),
                Value::Int(i) => i.checked_neg().map(Value::Int).ok_or(Fail::Abort("numeric overflow".into())),
                Value::Decimal { mantissa, scale } => Ok(Value::Decimal { mantissa: -mantissa, scale }),
                _ => abort("type error: negating non-numeric"),
            },
            Expr::Not(x) => {
                let v = self.eval(x, env, fr)?;
                Ok(bool_val(truth(&v)?.map(|b| !b)))
            }
            Expr::Bin(op, a, b) => match op {
                BinOp::And => {
                    let l = truth(&self.eval(a, env, fr)?)?;
                    if l == Some(false) {
                        return Ok(bool_val(Some(false)));
                    }
                    let r = truth(&self.eval(b, env, fr)?)?;
                    Ok(bool_val(match (l, r) {
                        (_, Some(false)) => Some(false),
                        (Some(true), Some(true)) => Some(true),
                        _ => None,
                    }))
                }
                BinOp::Or => {
                    let l = truth(&self.eval(a, env, fr)?)?;
                    if l == Some(true) {
                        return Ok(bool_val(Some(true)));
                    }
                    let r = truth(&self.eval(b, env, fr)?)?;
                    Ok(bool_val(match (l, r) {
                        (_, Some(true)) => Some(true),
                        (Some(false), Some(false)) => Some(false),
                        _ => None,
                    }))
                }
                op if op.is_comparison() => {
                    let l = self.eval(a, env, fr)?;
                    let r = self.eval(b, env, fr)?;
                    Ok(bool_val(l.sql_cmp(&r).map(|o| match op {
                        BinOp::Eq => o == Ordering::Equal,
                        BinOp::Ne => o != Ordering::Equal,
                        BinOp::Lt => o == Ordering::Less,
                        BinOp::Le => o != Ordering::Greater,
                        BinOp::Gt => o == Ordering::Greater,
                        _ => o != Ordering::Less,
                    })))
                }
                op => {
                    let l = self.eval(a, env, fr)?;
                    let r = self.eval(b, env, fr)?;
                    arith(*op, &l, &r)
                }
            },
            Expr::InList(x, list) => {
                let v = self.eval(x, env, fr)?;
                if v.is_null() {
                    return Ok(Value::Null);
                }
                let mut saw_null = false;
                for item in list {
                    let w = self.eval(item, env, fr)?;
                    match v.sql_cmp(&w) {
                        Some(Ordering::Equal) => return Ok(Value::Int(1)),
                        None if w.is_null() => saw_null = true,
                        _ => {}
                    }
                }
                Ok(if saw_null { Value::Null } else { Value::Int(0) })
            }
            Expr::Between(x, lo, hi) => {
                let v = self.eval(x, env, fr)?;
                let l = self.eval(lo, env, fr)?;
                let h = self.eval(hi, env, fr)?;
                let a = v.sql_cmp(&l).map(|o| o != Ordering::Less);
                let b = v.sql_cmp(&h).map(|o| o != Ordering::Greater);
                Ok(bool_val(match (a, b) {
                    (Some(false), _) | (_, Some(false)) => Some(false),
                    (Some(true), Some(true)) => Some(true),
                    _ => None,
                }))
            }
            Expr::IsNull(x, neg) => {
                let v = self.eval(x, env, fr)?;
                Ok(Value::Int((v.is_null() != *neg) as i64))
            }
            Expr::Agg(..) => abort("aggregate outside an aggregate query"),
            Expr::Subquery(q) => {
                let (_, rows) = self.select(q, env, fr)?;
                match rows.len() {
                    0 => Ok(Value::Null),
                    1 => Ok(rows[0].first().cloned().unwrap_or(Value::Null)),
                    _ => abort("subquery returns more than one row"),
                }
            }
        }
    }

    fn is_true(&mut self, e: &Expr, env: Option<&Env<'_>>, fr: &Frame) -> R<bool> {
        let v = self.eval(e, env, fr)?;
        Ok(truth(&v)? == Some(true))
    }

    /// Evaluate an expression over a group of tuples.
    fn eval_agg(&mut self, e: &Expr, srcs: &[Src], tuples: &[Vec<Row>], outer: Option<&Env<'_>>, fr: &Frame) -> R<Value> {
        match e {
            Expr::Agg(f, arg) => {
                let mut vals = Vec::new();
                for t in tuples {
                    let env = Env { srcs, tuple: t, parent: outer };
                    match arg {
                        None => vals.push(Value::Int(1)),
                        Some(a) => {
                            let v = self.eval(a, Some(&env), fr)?;
                            if !v.is_null() {
                                vals.push(v);
                            }
                        }
                    }
                }
                match f {
                    AggFn::Count => Ok(Value::Int(vals.len() as i64)),
                    AggFn::Sum => {
                        let mut acc: Option<Value> = None;
                        for v in vals {
                            if v.as_numeric().is_none() {
                                return abort("type error: SUM of non-numeric");
                            }
                            acc = Some(match acc {
                                None => v,
                                Some(a) => arith(BinOp::Add, &a, &v)?,
                            });
                        }
                        Ok(acc.unwrap_or(Value::Null))
                    }
                    AggFn::Min | AggFn::Max => {
                        let mut best: Option<Value> = None;
                        for v in vals {
                            best = Some(match best {
                                None => v,
                                Some(b) => {
                                    let o = order_cmp(&v, &b);
                                    let take = if *f == AggFn::Min { o == Ordering::Less } else { o == Ordering::Greater };
                                    if take {
                                        v
                                    } else {
                                        b
                                    }
                                }
                            });
                        }
                        Ok(best.unwrap_or(Value::Null))
                    }
                }
            }
            Expr::Neg(x) => {
                let v = self.eval_agg(x, srcs, tuples, outer, fr)?;
                self.eval(&Expr::Neg(Box::new(Expr::Lit(v))), None, fr)
            }
            Expr::Not(x) => {
                let v = self.eval_agg(x, srcs, tuples, outer, fr)?;
                Ok(bool_val(truth(&v)?.map(|b| !b)))
            }
            Expr::Bin(op, a, b) => {
                let l = self.eval_agg(a, srcs, tuples, outer, fr)?;
                let r = self.eval_agg(b, srcs, tuples, outer, fr)?;
                self.eval(&Expr::Bin(*op, Box::new(Expr::Lit(l)), Box::new(Expr::Lit(r))), None, fr)
            }
            Expr::IsNull(x, neg) => {
                let v = self.eval_agg(x, srcs, tuples, outer, fr)?;
                Ok(Value::Int((v.is_null() != *neg) as i64))
            }
            Expr::InList(..) | Expr::Between(..) if e.has_aggregate() => abort("unsupported aggregate expression"),
            other => match tuples.first() {
                Some(t) => {
                    let env = Env { srcs, tuple: t, parent: outer };
                    self.eval(other, Some(&env), fr)
                }
                None => self.eval(other, outer, fr),
            },
        }
    }

    // ---- reads ----

    /// Candidate rows of a single-table scan, narrowed by primary-key equalities.
    fn scan(&mut self, t: &str, filter: Option<&Expr>, outer: Option<&Env<'_>>, fr: &Frame) -> R<Vec<Row>> {
        let schema = self.schema(t)?;
        let mut keys: Option<Vec<Value>> = None;
        if let (Some(f), Some(&pk0)) = (filter, schema.primary_key.first()) {
            if !has_side_inputs(f) {
                let pk_name = schema.columns[pk0].name.as_str();
                let ty = schema.columns[pk0].ty;
                let mut cs = Vec::new();
                conjuncts(f, &mut cs);
                let is_pk = |x: &Expr| matches!(x, Expr::Col(c) if c.table.as_deref() == Some(t) && c.column == pk_name);
                for c in cs {
                    let cands: Option<Vec<&Expr>> = match c {
                        Expr::Bin(BinOp::Eq, a, b) if is_pk(a) && !refs_table(b, t) => Some(vec![&**b]),
                        Expr::Bin(BinOp::Eq, a, b) if is_pk(b) && !refs_table(a, t) => Some(vec![&**a]),
                        Expr::InList(a, l) if is_pk(a) && l.iter().all(|x| !refs_table(x, t)) => Some(l.iter().collect()),
                        _ => None,
                    };
                    if let Some(cands) = cands {
                        let mut vals = Vec::new();
                        let mut ok = true;
                        for x in cands {
                            let v = self.eval(x, outer, fr)?;
                            if v.is_null() {
                                continue;
                            }
                            if !exact_type(&v, ty) {
                                ok = false;
                                break;
                            }
                            vals.push(v);
                        }
                        if ok {
                            vals.sort();
                            vals.dedup();
                            keys = Some(vals);
                            break;
                        }
                    }
                }
            }
        }
        let data = self.data(t)?;
        Ok(match keys {
            Some(ks) => {
                let mut out = Vec::new();
                for k in ks {
                    out.extend(data.pk_prefix(core::slice::from_ref(&k)).cloned());
                }
                out
            }
            None => data.iter().cloned().collect(),
        })
    }

    fn source_rows(&mut self, name: &str, filter: Option<&Expr>, outer: Option<&Env<'_>>, fr: &Frame) -> R<(Src, Vec<Row>)> {
        let cat = self.catalog();
        if let Some(v) = cat.views.get(name) {
            let (_, rows) = self.select(&v.query, None, &Frame::default())?;
            let rows = rows.into_iter().map(Row::from).collect();
            return Ok((Src { name: name.into(), cols: v.columns.clone() }, rows));
        }
        let schema = self.schema(name)?;
        let rows = self.scan(name, filter, outer, fr)?;
        Ok((Src { name: name.into(), cols: schema.columns.iter().map(|c| c.name.clone()).collect() }, rows))
    }

    fn select(&mut self, q: &Select, outer: Option<&Env<'_>>, fr: &Frame) -> R<(Vec<String>, Vec<Vec<Value>>)> {
        let mut srcs: Vec<Src> = Vec::new();
        let mut tuples: Vec<Vec<Row>> = Vec::new();
        match &q.from {
            None => tuples.push(Vec::new()),
            Some(f) => {
                let pushdown = if q.joins.is_empty() { q.filter.as_ref() } else { None };
                let (s, rows) = self.source_rows(f, pushdown, outer, fr)?;
                srcs.push(s);
                tuples = rows.into_iter().map(|r| vec![r]).collect();
            }
        }
        for j in &q.joins {
            let (s, rows) = self.source_rows(&j.table, None, None, fr)?;
            let (own, other) = if j.right.table.as_deref() == Some(j.table.as_str()) { (&j.right, &j.left) } else { (&j.left, &j.right) };
            let Some(own_pos) = s.cols.iter().position(|c| *c == own.column) else {
                return abort(format!("unknown column {}", own));
            };
            let mut index: BTreeMap<Value, Vec<Row>> = BTreeMap::new();
            for r in rows {
                index.entry(r[own_pos].clone()).or_default().push(r);
            }
            let mut next = Vec::new();
            for t in tuples {
                let key = {
                    let env = Env { srcs: &srcs, tuple: &t, parent: outer };
                    match env.lookup(other.table.as_deref().unwrap_or(""), &other.column) {
                        Some(v) => v,
                        None => return abort(format!("unknown column {}", other)),
                    }
                };
                if key.is_null() {
                    continue;
                }
                for (k, rs) in &index {
                    if sql_eq(k, &key) {
                        for r in rs {
                            let mut t2 = t.clone();
                            t2.push(r.clone());
                            next.push(t2);
                        }
                    }
                }
            }
            srcs.push(s);
            tuples = next;
        }
        if let Some(f) = &q.filter {
            let mut kept = Vec::with_capacity(tuples.len());
            for t in tuples {
                let env = Env { srcs: &srcs, tuple: &t, parent: outer };
                if self.is_true(f, Some(&env), fr)? {
                    kept.push(t);
                }
            }
            tuples = kept;
        }
        let mut names = Vec::new();
        for it in &q.items {
            match it {
                SelectItem::Star(None) => {
                    for s in &srcs {
                        names.extend(s.cols.iter().cloned());
                    }
                }
                SelectItem::Star(Some(t)) => {
                    if let Some(s) = srcs.iter().find(|s| &s.name == t) {
                        names.extend(s.cols.iter().cloned());
                    }
                }
                SelectItem::Expr(e, alias) => names.push(match (alias, e) {
                    (Some(a), _) => a.clone(),
                    (None, Expr::Col(c)) => c.column.clone(),
                    (None, e) => format!("{}", e),
                }),
            }
        }
        if q.has_aggregate_items() {
            let mut row = Vec::new();
            for it in &q.items {
                if let SelectItem::Expr(e, _) = it {
                    row.push(self.eval_agg(e, &srcs, &tuples, outer, fr)?);
                } else {
                    return abort("star in aggregate query");
                }
            }
            return Ok((names, vec![row]));
        }
        if !q.order_by.is_empty() {
            let mut keyed = Vec::with_capacity(tuples.len());
            for t in tuples {
                let env = Env { srcs: &srcs, tuple: &t, parent: outer };
                let mut ks = Vec::new();
                for (e, _) in &q.order_by {
                    ks.push(self.eval(e, Some(&env), fr)?);
                }
                keyed.push((ks, t));
            }
            keyed.sort_by(|(a, _), (b, _)| {
                for (i, (_, desc)) in q.order_by.iter().enumerate() {
                    let o = order_cmp(&a[i], &b[i]);
                    let o = if *desc { o.reverse() } else { o };
                    if o != Ordering::Equal {
                        return o;
                    }
                }
                Ordering::Equal
            });
            tuples = keyed.into_iter().map(|(_, t)| t).collect();
        }
        if let Some(l) = q.limit {
            tuples.truncate(l as usize);
        }
        let mut out = Vec::with_capacity(tuples.len());
        for t in &tuples {
            let env = Env { srcs: &srcs, tuple: t, parent: outer };
            let mut row = Vec::new();
            for it in &q.items {
                match it {
                    SelectItem::Star(None) => {
                        for r in t {
                            row.extend(r.iter().cloned());
                        }
                    }
                    SelectItem::Star(Some(n)) => {
                        if let Some(i) = srcs.iter().position(|s| &s.name == n) {
                            row.extend(t[i].iter().cloned());
                        }
                    }
                    SelectItem::Expr(e, _) => row.push(self.eval(e, Some(&env), fr)?),
                }
            }
            out.push(row);
        }
        Ok((names, out))
    }

    // ---- statements ----

    fn top(&mut self, s: &Statement, fr: &mut Frame) -> R<Vec<Vec<Value>>> {
        if let Statement::Select(q) = s {
            if q.into.is_empty() {
                return Ok(self.select(q, None, fr)?.1);
            }
        }
        self.stmt(s, fr)?;
        Ok(Vec::new())
    }

    fn stmt(&mut self, s: &Statement, fr: &mut Frame) -> R<()> {
        match s {
            Statement::Select(q) => {
                let (_, rows) = self.select(q, None, fr)?;
                if !q.into.is_empty() {
                    if rows.len() > 1 {
                        return abort("SELECT INTO returned more than one row");
                    }
                    if let Some(r) = rows.into_iter().next() {
                        for (v, x) in q.into.iter().zip(r) {
                            self.assign(fr, v, x)?;
                        }
                    }
                }
                Ok(())
            }
            Statement::Insert(i) => self.insert(i, fr),
            Statement::Update(u) => self.update(u, fr),
            Statement::Delete(d) => self.delete(d, fr),
            Statement::TransactionBlock(stmts) => {
                for x in stmts {
                    self.stmt(x, fr)?;
                }
                Ok(())
            }
            Statement::CallProcedure(name, args) => {
                let cat = self.catalog();
                let Some(p) = cat.procedures.get(name).cloned() else {
                    return abort(format!("no such procedure {}", name));
                };
                if p.params.len() != args.len() {
                    return abort(format!("{} expects {} arguments", name, p.params.len()));
                }
                let mut inner = Frame::default();
                for ((pn, ty), a) in p.params.iter().zip(args) {
                    let v = self.eval(a, None, fr)?;
                    let Some(v) = v.coerce(*ty) else {
                        return abort(format!("bad argument for {}", pn));
                    };
                    inner.vars.insert(pn.clone(), (Some(*ty), v));
                }
                self.depth += 1;
                if self.depth > MAX_TRIGGER_DEPTH {
                    return abort("nesting too deep");
                }
                let r = self.body(&p.body, &mut inner);
                self.depth -= 1;
                r
            }
            _ => abort("DDL is not allowed here"),
        }
    }

    fn assign(&mut self, fr: &mut Frame, name: &str, v: Value) -> R<()> {
        let Some(slot) = fr.vars.get_mut(name) else {
            return abort(format!("unknown variable {}", name));
        };
        let v = match slot.0 {
            Some(ty) => match v.coerce(ty) {
                Some(v) => v,
                None => return abort(format!("cannot assign to {}", name)),
            },
            None => v,
        };
        slot.1 = v;
        Ok(())
    }

    fn body(&mut self, b: &[BodyStmt], fr: &mut Frame) -> R<()> {
        for s in b {
            match s {
                BodyStmt::Declare(n, ty) => {
                    fr.vars.insert(n.clone(), (Some(*ty), Value::Null));
                }
                BodyStmt::Set(n, e) => {
                    let v = self.eval(e, None, fr)?;
                    self.assign(fr, n, v)?;
                }
                BodyStmt::Query(q) => self.stmt(q, fr)?,
                BodyStmt::If(branches, els) => {
                    let mut taken = false;
                    for (c, blk) in branches {
                        if self.is_true(c, None, fr)? {
                            self.body(blk, fr)?;
                            taken = true;
                            break;
                        }
                    }
                    if !taken {
                        self.body(els, fr)?;
                    }
                }
                BodyStmt::Signal(m) => return abort(format!("signal: {}", m)),
            }
        }
        Ok(())
    }

    fn fire(&mut self, schema: &Arc<TableSchema>, ev: Event, timing: Timing, new: Option<&Row>, old: Option<&Row>) -> R<()> {
        let trigs = self.db.catalog.triggers_for(&schema.name, ev, timing);
        for t in trigs {
            if self.depth >= MAX_TRIGGER_DEPTH {
                return abort("trigger nesting too deep");
            }
            let mut fr = Frame {
                vars: BTreeMap::new(),
                new: new.map(|r| (schema.clone(), r.clone())),
                old: old.map(|r| (schema.clone(), r.clone())),
            };
            self.depth += 1;
            let r = self.body(&t.body, &mut fr);
            self.depth -= 1;
            r?;
        }
        Ok(())
    }

    /// Coerce, fill AUTO_INCREMENT, then NOT NULL and CHECK.
    fn prepare_row(&mut self, schema: &TableSchema, mut vals: Vec<Value>, assign_auto: bool) -> R<Row> {
        for (i, c) in schema.columns.iter().enumerate() {
            match vals[i].coerce(c.ty) {
                Some(v) => vals[i] = v,
                None => return abort(format!("type mismatch for {}.{}", schema.name, c.name)),
            }
        }
        if let Some(ai) = schema.auto_increment_column() {
            match vals[ai] {
                Value::Null if assign_auto => vals[ai] = Value::Int(self.next_auto_id(&schema.name)?),
                Value::Int(v) => self.set_counter(&schema.name, v)?,
                _ => {}
            }
        }
        self.check_row(schema, &vals)?;
        Ok(Row::from(vals))
    }

    fn check_row(&mut self, schema: &TableSchema, vals: &[Value]) -> R<()> {
        for (i, c) in schema.columns.iter().enumerate() {
            if c.not_null && vals[i].is_null() {
                return abort(format!("{}.{} cannot be NULL", schema.name, c.name));
            }
        }
        if !schema.checks.is_empty() {
            let src = [Src { name: schema.name.clone(), cols: schema.columns.iter().map(|c| c.name.clone()).collect() }];
            let row = [Row::from(vals.to_vec())];
            let env = Env { srcs: &src, tuple: &row, parent: None };
            let fr = Frame::default();
            for c in &schema.checks {
                let v = self.eval(c, Some(&env), &fr)?;
                if truth(&v)? == Some(false) {
                    return abort(format!("CHECK failed on {}", schema.name));
                }
            }
        }
        Ok(())
    }

    fn check_unique(&self, schema: &TableSchema, row: &Row) -> R<()> {
        if schema.primary_key.is_empty() {
            return Ok(());
        }
        let d = self.data(&schema.name)?;
        if d.get_by_pk(&d.key_of(row)).is_some() {
            return abort(format!("duplicate primary key in {}", schema.name));
        }
        Ok(())
    }

    fn parent_has(&self, table: &str, col: &str, v: &Value) -> R<bool> {
        let schema = self.schema(table)?;
        let d = self.data(table)?;
        let Some(ci) = schema.col_index(col) else { return Ok(false) };
        if schema.primary_key.first() == Some(&ci) && exact_type(v, schema.columns[ci].ty) {
            return Ok(d.pk_prefix(core::slice::from_ref(v)).next().is_some());
        }
        Ok(d.iter().any(|r| sql_eq(&r[ci], v)))
    }

    /// With `old`, only foreign keys whose column changed are checked.
    fn check_fks(&self, schema: &TableSchema, row: &Row, old: Option<&Row>) -> R<()> {
        for fk in &schema.foreign_keys {
            let ci = schema.col_index(&fk.column).unwrap();
            let v = &row[ci];
            if v.is_null() || old.is_some_and(|o| o[ci] == *v) {
                continue;
            }
            if !self.parent_has(&fk.ref_table, &fk.ref_column, v)? {
                return abort(format!("foreign key {}.{} -> {}.{} violated", schema.name, fk.column, fk.ref_table, fk.ref_column));
            }
        }
        Ok(())
    }

    /// Children of `old` that lose their parent value.
    fn orphans(&self, schema: &TableSchema, old: &Row, new: Option<&Row>) -> R<Vec<(String, ForeignKey, Vec<Row>)>> {
        let cat = self.catalog();
        let mut out = Vec::new();
        for (child, fk) in cat.referencing(&schema.name) {
            let ri = schema.col_index(&fk.ref_column).unwrap();
            let v = &old[ri];
            if v.is_null() || new.is_some_and(|n| sql_eq(&n[ri], v)) {
                continue;
            }
            if self.parent_has(&schema.name, &fk.ref_column, v)? {
                continue;
            }
            let cs = self.schema(&child)?;
            let ci = cs.col_index(&fk.column).unwrap();
            let rows: Vec<Row> = self.data(&child)?.iter().filter(|r| sql_eq(&r[ci], v)).cloned().collect();
            if !rows.is_empty() {
                out.push((child, fk, rows));
            }
        }
        Ok(out)
    }

    fn insert(&mut self, ins: &Insert, fr: &mut Frame) -> R<()> {
        let schema = self.schema(&ins.table)?;
        let positions: Vec<usize> = match &ins.columns {
            Some(cols) => {
                let mut p = Vec::new();
                for c in cols {
                    match schema.col_index(c) {
                        Some(i) => p.push(i),
                        None => return abort(format!("unknown column {}.{}", ins.table, c)),
                    }
                }
                p
            }
            None => (0..schema.columns.len()).collect(),
        };
        let sources: Vec<Vec<Value>> = match &ins.source {
            InsertSource::Values(rows) => {
                let mut out = Vec::new();
                for r in rows {
                    let mut vals = Vec::new();
                    for e in r {
                        vals.push(self.eval(e, None, fr)?);
                    }
                    out.push(vals);
                }
                out
            }
            InsertSource::Select(q) => self.select(q, None, fr)?.1,
        };
        for src in sources {
            if src.len() != positions.len() {
                return abort("column count mismatch");
            }
            let mut vals: Vec<Value> = schema.columns.iter().map(|c| c.default.clone().unwrap_or(Value::Null)).collect();
            for (p, v) in positions.iter().zip(src) {
                vals[*p] = v;
            }
            let row = self.prepare_row(&schema, vals, true)?;
            self.fire(&schema, Event::Insert, Timing::Before, Some(&row), None)?;
            self.check_unique(&schema, &row)?;
            self.w_insert(&schema.name, row.clone())?;
            self.check_fks(&schema, &row, None)?;
            self.fire(&schema, Event::Insert, Timing::After, Some(&row), None)?;
        }
        Ok(())
    }

    fn matching(&mut self, table: &str, filter: Option<&Expr>, fr: &Frame) -> R<(Src, Vec<Row>)> {
        let (src, rows) = self.source_rows(table, filter, None, fr)?;
        let Some(f) = filter else { return Ok((src, rows)) };
        let srcs = [src];
        let mut out = Vec::new();
        for r in rows {
            let t = [r];
            let env = Env { srcs: &srcs, tuple: &t, parent: None };
            if self.is_true(f, Some(&env), fr)? {
                let [r] = t;
                out.push(r);
            }
        }
        let [src] = srcs;
        Ok((src, out))
    }

    fn update(&mut self, u: &Update, fr: &mut Frame) -> R<()> {
        let schema = self.schema(&u.table)?;
        let (src, rows) = self.matching(&u.table, u.filter.as_ref(), fr)?;
        let srcs = [src];
        let mut sets = Vec::new();
        for (c, e) in &u.sets {
            match schema.col_index(c) {
                Some(i) => sets.push((i, e)),
                None => return abort(format!("unknown column {}.{}", u.table, c)),
            }
        }
        for old in rows {
            let mut vals = old.to_vec();
            {
                let t = [old.clone()];
                let env = Env { srcs: &srcs, tuple: &t, parent: None };
                for (i, e) in &sets {
                    vals[*i] = self.eval(e, Some(&env), fr)?;
                }
            }
            let new = self.prepare_row(&schema, vals, false)?;
            self.fire(&schema, Event::Update, Timing::Before, Some(&new), Some(&old))?;
            if !self.data(&schema.name)?.contains(&old) {
                continue;
            }
            self.w_remove(&schema.name, &old)?;
            self.check_unique(&schema, &new)?;
            self.w_insert(&schema.name, new.clone())?;
            if !self.orphans(&schema, &old, Some(&new))?.is_empty() {
                return abort(format!("update of {} would orphan referencing rows", schema.name));
            }
            self.check_fks(&schema, &new, Some(&old))?;
            self.fire(&schema, Event::Update, Timing::After, Some(&new), Some(&old))?;
        }
        Ok(())
    }

    fn delete(&mut self, d: &Delete, fr: &mut Frame) -> R<()> {
        let schema = self.schema(&d.table)?;
        let (_, rows) = self.matching(&d.table, d.filter.as_ref(), fr)?;
        for old in rows {
            self.fire(&schema, Event::Delete, Timing::Before, None, Some(&old))?;
            if !self.data(&schema.name)?.contains(&old) {
                continue;
            }
            self.delete_row(&schema, &old, 0)?;
            self.fire(&schema, Event::Delete, Timing::After, None, Some(&old))?;
        }
        Ok(())
    }

    /// Remove a row and apply ON DELETE actions. Cascades do not fire triggers.
    fn delete_row(&mut self, schema: &Arc<TableSchema>, old: &Row, depth: usize) -> R<()> {
        if depth > 64 {
            return abort("cascade too deep");
        }
        self.w_remove(&schema.name, old)?;
        for (child, fk, rows) in self.orphans(schema, old, None)? {
            if fk.on_delete == FkAction::Restrict {
                return abort(format!("row of {} is referenced by {}", schema.name, child));
            }
            let cs = self.schema(&child)?;
            for r in rows {
                if self.data(&child)?.contains(&r) {
                    self.delete_row(&cs, &r, depth + 1)?;
                }
            }
        }
        Ok(())
    }
}

fn whole_table_delta(data: &TableData, schema: &TableSchema, existed_before: bool, exists_after: bool) -> TableDelta {
    let deleted: Vec<Row> = data.iter().cloned().collect();
    let h = data.hash(schema).expect("stored rows conform to schema");
    TableDelta {
        existed_before,
        exists_after,
        deleted,
        inserted: Vec::new(),
        hash_delta: TableHash::ZERO.sub(h),
        counter_after: data.counter,
    }
}

fn ddl_writable(db: &Database, t: &str) -> Result<(), ExecError> {
    match &db.writable {
        Some(w) if !w.contains(t) => Err(ExecError::AccessViolation(t.into())),
        _ => Ok(()),
    }
}

fn ddl_data(db: &Database, t: &str) -> Result<Arc<TableData>, ExecError> {
    db.tables.get(t).cloned().ok_or_else(|| ExecError::MissingView(t.into()))
}

fn exec_ddl(db: &mut Database, stmt: &Statement, idx: u64) -> Result<ExecEffect, ExecError> {
    let next = match apply_ddl(&db.catalog, stmt, idx) {
        Ok(c) => c,
        Err(e) => return Ok(ExecEffect::aborted(format!("{}", e))),
    };
    let mut eff = ExecEffect::default();
    match stmt {
        Statement::CreateTable(ct) => {
            ddl_writable(db, &ct.name)?;
            let s = &next.tables[&ct.name];
            db.tables.insert(ct.name.clone(), Arc::new(TableData::for_schema(s)));
            eff.tables.insert(ct.name.clone(), TableDelta { existed_before: false, exists_after: true, ..Default::default() });
        }
        Statement::DropTable(t) => {
            ddl_writable(db, t)?;
            let data = ddl_data(db, t)?;
            eff.tables.insert(t.clone(), whole_table_delta(&data, &db.catalog.tables[t], true, false));
            db.tables.remove(t);
        }
        Statement::TruncateTable(t) => {
            ddl_writable(db, t)?;
            if db.catalog.referencing(t).iter().any(|(c, _)| c != t) {
                return Ok(ExecEffect::aborted(format!("table {} is referenced by a foreign key", t)));
            }
            let data = ddl_data(db, t)?;
            eff.tables.insert(t.clone(), whole_table_delta(&data, &db.catalog.tables[t], true, true));
            let mut fresh = TableData::new(data.pk_columns().to_vec());
            fresh.counter = data.counter;
            db.tables.insert(t.clone(), Arc::new(fresh));
            return Ok(eff);
        }
        Statement::AlterTable(t, action) => {
            ddl_writable(db, t)?;
            let data = ddl_data(db, t)?;
            let old_s = db.catalog.tables[t].clone();
            let new_s = next.tables[t].clone();
            match action {
                AlterAction::AddColumn(_) | AlterAction::DropColumn(_) => {
                    let mut nd = TableData::new(new_s.primary_key.clone());
                    nd.counter = data.counter;
                    let mut delta = whole_table_delta(&data, &old_s, true, true);
                    let drop_at = match action {
                        AlterAction::DropColumn(c) => old_s.col_index(c),
                        _ => None,
                    };
                    let fill = new_s.columns.last().and_then(|c| c.default.clone()).unwrap_or(Value::Null);
                    for r in data.iter() {
                        let mut v = r.to_vec();
                        match drop_at {
                            Some(i) => {
                                v.remove(i);
                            }
                            None => v.push(fill.clone()),
                        }
                        let row = Row::from(v);
                        delta.hash_delta = delta.hash_delta.add(crate::hash::row_hash(&row, &new_s).expect("rewritten rows conform"));
                        delta.inserted.push(row.clone());
                        nd.insert(row);
                    }
                    db.tables.insert(t.clone(), Arc::new(nd));
                    eff.tables.insert(t.clone(), delta);
                }
                AlterAction::AddForeignKey(fk) => {
                    let mut probe = Database { catalog: Arc::new(next.clone()), tables: db.tables.clone(), writable: None };
                    let ex = Exec::scratch(&mut probe, idx);
                    let ci = new_s.col_index(&fk.column).unwrap();
                    for r in data.iter() {
                        if r[ci].is_null() {
                            continue;
                        }
                        match ex.parent_has(&fk.ref_table, &fk.ref_column, &r[ci]) {
                            Ok(true) => {}
                            Ok(false) | Err(Fail::Abort(_)) => {
                                return Ok(ExecEffect::aborted("existing rows violate the new foreign key".into()))
                            }
                            Err(Fail::Hard(e)) => return Err(e),
                        }
                    }
                }
                AlterAction::AddCheck(e) => {
                    let mut scratch = db.clone();
                    let mut ex = Exec::scratch(&mut scratch, idx);
                    let mut qualified = e.clone();
                    qualified.walk_mut(&mut |x| {
                        if let Expr::Col(c) = x {
                            c.table = Some(t.clone());
                        }
                    });
                    let src = [Src { name: t.clone(), cols: old_s.columns.iter().map(|c| c.name.clone()).collect() }];
                    for r in data.iter() {
                        let tuple = [r.clone()];
                        let env = Env { srcs: &src, tuple: &tuple, parent: None };
                        match ex.eval(&qualified, Some(&env), &Frame::default()).and_then(|v| truth(&v)) {
                            Ok(Some(false)) | Err(Fail::Abort(_)) => {
                                return Ok(ExecEffect::aborted("existing rows violate the new CHECK".into()))
                            }
                            Err(Fail::Hard(e)) => return Err(e),
                            _ => {}
                        }
                    }
                }
            }
        }
        _ => {}
    }
    let next = Arc::new(next);
    db.catalog = next.clone();
    eff.catalog = Some(next);
    Ok(eff)
}

/// Apply a recorded effect to a view without executing anything.
pub fn apply_effect(db: &mut Database, eff: &ExecEffect) {
    if let Some(c) = &eff.catalog {
        db.catalog = c.clone();
    }
    for (t, d) in &eff.tables {
        let mut slot = db.tables.remove(t);
        crate::table::apply_delta(&mut slot, d, db.catalog.tables.get(t).map(|s| s.as_ref()));
        if let Some(s) = slot {
            db.tables.insert(t.clone(), s);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::record::{build_log, RawRecord};

    pub(crate) fn run_log(stmts: &[&str]) -> (Database, Vec<ExecEffect>) {
        let raw: Vec<RawRecord> = stmts
            .iter()
            .enumerate()
            .map(|(i, s)| RawRecord {
                line: i + 1,
                idx: i as u64 + 1,
                ts: 1_700_000_000_000_000 + i as i64,
                session: "s".into(),
                text: (*s).into(),
                nondet: Vec::new(),
            })
            .collect();
        let (recs, _) = build_log(raw, Catalog::default()).unwrap();
        let mut db = Database::default();
        let mut effs = Vec::new();
        for r in &recs {
            effs.push(execute(&mut db, r, &ExecOptions::regular()).unwrap());
        }
        (db, effs)
    }

    fn rows(db: &Database, t: &str) -> Vec<Vec<Value>> {
        db.tables[t].iter().map(|r| r.to_vec()).collect()
    }

    const BANK: &[&str] = &[
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

    #[test]
    fn bank_log_executes() {
        let (db, effs) = run_log(BANK);
        assert!(effs.iter().all(|e| e.aborted.is_none()), "{:?}", effs.iter().map(|e| &e.aborted).collect::<Vec<_>>());
        assert_eq!(rows(&db, "Accounts")[0][2], Value::Int(0));
        assert_eq!(rows(&db, "Accounts")[1][2], Value::Int(100));
        assert_eq!(rows(&db, "Statements"), vec![vec![Value::Int(1), Value::Int(100)]]);
        assert_eq!(db.catalog.triggers.len(), 1);
    }

    #[test]
    fn trigger_signal_aborts_block() {
        let mut log: Vec<&str> = BANK[..9].to_vec();
        log.push("BEGIN; INSERT INTO Transactions VALUES (2, 1, 50); UPDATE Accounts SET balance = balance + 50 WHERE aid = 1; COMMIT");
        let (db, effs) = run_log(&log);
        assert!(effs.last().unwrap().aborted.is_some());
        assert!(effs.last().unwrap().tables.is_empty());
        assert!(db.tables["Transactions"].is_empty());
        assert_eq!(rows(&db, "Accounts")[0][2], Value::Int(100));
    }

    #[test]
    fn fk_and_pk_violations_abort() {
        let mut log: Vec<&str> = BANK[..8].to_vec();
        log.push("INSERT INTO Accounts VALUES (9, 'nobody', 0)");
        log.push("INSERT INTO Accounts VALUES (1, 'bob', 0)");
        log.push("DELETE FROM Users WHERE uid = 'alice'");
        let (_, effs) = run_log(&log);
        assert!(effs[8].aborted.is_some());
        assert!(effs[9].aborted.is_some());
        assert!(effs[10].aborted.is_some());
    }

    #[test]
    fn cascade_and_auto_increment() {
        let (db, effs) = run_log(&[
            "CREATE TABLE P (id INT PRIMARY KEY AUTO_INCREMENT, name TEXT)",
            "CREATE TABLE C (id INT PRIMARY KEY AUTO_INCREMENT, pid INT, FOREIGN KEY (pid) REFERENCES P(id) ON DELETE CASCADE)",
            "INSERT INTO P (name) VALUES ('a'), ('b')",
            "INSERT INTO C (pid) VALUES (1), (1), (2)",
            "DELETE FROM P WHERE id = 1",
            "INSERT INTO P (name) VALUES ('c')",
        ]);
        assert_eq!(effs[2].auto_ids, vec![("P".into(), 1), ("P".into(), 2)]);
        assert_eq!(effs[4].tables["C"].deleted.len(), 2);
        assert_eq!(db.tables["C"].len(), 1);
        assert_eq!(effs[5].auto_ids, vec![("P".into(), 3)]);
    }

    #[test]
    fn effects_are_exact() {
        let (_, effs) = run_log(BANK);
        let mut db = Database::default();
        for e in &effs {
            apply_effect(&mut db, e);
        }
        let (direct, _) = run_log(BANK);
        for (t, d) in &direct.tables {
            assert_eq!(db.tables[t].multiset(), d.multiset());
        }
    }

    #[test]
    fn procedure_and_variables() {
        let (db, effs) = run_log(&[
            "CREATE TABLE A (id INT PRIMARY KEY, bal INT)",
            "INSERT INTO A VALUES (1, 100), (2, 0)",
            "CREATE PROCEDURE Send(src INT, dst INT, amt INT) BEGIN DECLARE b INT; SELECT bal INTO b FROM A WHERE id = src; IF b < amt THEN SIGNAL SQLSTATE '45000'; END IF; UPDATE A SET bal = bal - amt WHERE id = src; UPDATE A SET bal = bal + amt WHERE id = dst; END",
            "CALL Send(1, 2, 60)",
            "CALL Send(1, 2, 60)",
        ]);
        assert!(effs[3].aborted.is_none());
        assert!(effs[4].aborted.is_some());
        assert_eq!(rows(&db, "A"), vec![vec![Value::Int(1), Value::Int(40)], vec![Value::Int(2), Value::Int(60)]]);
    }

    #[test]
    fn nondet_recorded_and_replayed() {
        let raw = vec![
            RawRecord { line: 1, idx: 1, ts: 0, session: "s".into(), text: "CREATE TABLE T (id INT PRIMARY KEY, r DECIMAL(10,6), t TIMESTAMP)".into(), nondet: vec![] },
            RawRecord { line: 2, idx: 2, ts: 5_000_000, session: "s".into(), text: "INSERT INTO T VALUES (1, RAND(), NOW())".into(), nondet: vec![] },
        ];
        let (recs, _) = build_log(raw, Catalog::default()).unwrap();
        let mut db = Database::default();
        execute(&mut db, &recs[0], &ExecOptions::regular()).unwrap();
        let e = execute(&mut db, &recs[1], &ExecOptions::regular()).unwrap();
        assert_eq!(e.nondet.len(), 2);
        let mut rec = recs[1].clone();
        rec.nondet = e
            .nondet
            .iter()
            .enumerate()
            .map(|(i, (f, v))| NondetValue { func: *f, seq: i as u32, value: format_nondet(v) })
            .collect();
        let mut db2 = Database::default();
        execute(&mut db2, &recs[0], &ExecOptions::replay()).unwrap();
        let opts = ExecOptions { estimate_nondet: false, ..ExecOptions::replay() };
        let e2 = execute(&mut db2, &rec, &opts).unwrap();
        assert_eq!(e2.tables, e.tables);
        assert!(matches!(execute(&mut db2.clone(), &recs[1], &opts), Err(ExecError::NondetExhausted { idx: 2 })));
    }

    #[test]
    fn views_joins_order_limit() {
        let (db, _) = run_log(&[
            "CREATE TABLE U (id INT PRIMARY KEY, name TEXT)",
            "CREATE TABLE O (oid INT PRIMARY KEY, uid INT, amt INT)",
            "INSERT INTO U VALUES (1, 'a'), (2, 'b')",
            "INSERT INTO O VALUES (10, 1, 5), (11, 2, 7), (12, 1, 9)",
            "CREATE VIEW Big AS SELECT oid, amt FROM O WHERE amt > 6",
        ]);
        let mut db = db;
        let q = |db: &mut Database, s: &str| {
            let stmt = crate::sql::parse_statement(s, &db.catalog, 99).unwrap();
            let rec = QueryRecord { idx: 99, ts: 0, session: String::new(), text: s.into(), stmt, nondet: vec![] };
            execute(db, &rec, &ExecOptions::regular()).unwrap().result
        };
        assert_eq!(q(&mut db, "SELECT COUNT(*) FROM Big"), vec![vec![Value::Int(2)]]);
        assert_eq!(
            q(&mut db, "SELECT U.name, O.amt FROM O JOIN U ON O.uid = U.id WHERE O.amt > 5 ORDER BY O.amt DESC LIMIT 1"),
            vec![vec![Value::text("a"), Value::Int(9)]]
        );
        assert_eq!(q(&mut db, "SELECT oid FROM O LIMIT 2"), vec![vec![Value::Int(10)], vec![Value::Int(11)]]);
        assert_eq!(q(&mut db, "SELECT 7 / 2"), vec![vec![Value::Decimal { mantissa: 35000, scale: 4 }]]);
    }

    #[test]
    fn alter_rewrites_rows() {
        let (db, effs) = run_log(&[
            "CREATE TABLE T (id INT PRIMARY KEY, a INT)",
            "INSERT INTO T VALUES (1, 2)",
            "ALTER TABLE T ADD COLUMN b INT DEFAULT 7",
            "ALTER TABLE T DROP COLUMN a",
        ]);
        assert_eq!(rows(&db, "T"), vec![vec![Value::Int(1), Value::Int(7)]]);
        assert_eq!(effs[2].tables["T"].inserted.len(), 1);
        assert_eq!(db.table_hash("T"), effs.iter().filter_map(|e| e.tables.get("T")).fold(TableHash::ZERO, |h, d| h.add(d.hash_delta)));
    }
}
