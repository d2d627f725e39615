//! Additive table hashing: table hash = sum of SHA-256 row hashes mod 2^256.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use sha2::{Digest, Sha256};

use crate::catalog::TableSchema;
use crate::error::HashError;
use crate::value::{ScalarType, Value};

/// Element of Z/2^256, stored as little-endian 64-bit limbs.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Default, PartialOrd, Ord)]
pub struct TableHash([u64; 4]);

impl TableHash {
    pub const ZERO: TableHash = TableHash([0; 4]);

    pub fn from_be_bytes(b: [u8; 32]) -> Self {
        let mut l = [0u64; 4];
        for (i, limb) in l.iter_mut().enumerate() {
            let off = 32 - 8 * (i + 1);
            *limb = u64::from_be_bytes(b[off..off + 8].try_into().unwrap());
        }
        TableHash(l)
    }

    pub fn to_be_bytes(&self) -> [u8; 32] {
        let mut b = [0u8; 32];
        for i in 0..4 {
            let off = 32 - 8 * (i + 1);
            b[off..off + 8].copy_from_slice(&self.0[i].to_be_bytes());
        }
        b
    }

    pub fn add(self, o: TableHash) -> TableHash {
        let mut r = [0u64; 4];
        let mut carry = false;
        for (i, out) in r.iter_mut().enumerate() {
            let (s1, c1) = self.0[i].overflowing_add(o.0[i]);
            let (s2, c2) = s1.overflowing_add(carry as u64);
            *out = s2;
            carry = c1 || c2;
        }
        TableHash(r)
    }

    pub fn neg(self) -> TableHash {
        let mut inv = TableHash([!self.0[0], !self.0[1], !self.0[2], !self.0[3]]);
        inv = inv.add(TableHash([1, 0, 0, 0]));
        inv
    }

    pub fn sub(self, o: TableHash) -> TableHash {
        self.add(o.neg())
    }

    pub fn to_hex(&self) -> String {
        crate::catalog::hex(&self.to_be_bytes())
    }

    pub fn from_hex(s: &str) -> Option<TableHash> {
        if s.len() != 64 {
            return None;
        }
        let mut b = [0u8; 32];
        for (i, byte) in b.iter_mut().enumerate() {
            *byte = u8::from_str_radix(s.get(2 * i..2 * i + 2)?, 16).ok()?;
        }
        Some(TableHash::from_be_bytes(b))
    }
}

impl fmt::Debug for TableHash {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "TableHash({})", self.to_hex())
    }
}

impl fmt::Display for TableHash {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

fn value_bytes(v: &Value, out: &mut Vec<u8>) {
    match v {
        Value::Null => {}
        Value::Int(i) | Value::Timestamp(i) => out.extend_from_slice(&i.to_be_bytes()),
        Value::Decimal { mantissa, scale } => {
            out.push(*scale);
            out.extend_from_slice(&mantissa.to_be_bytes());
        }
        Value::Text(t) => out.extend_from_slice(t.as_bytes()),
    }
}

fn conforms(v: &Value, ty: ScalarType) -> bool {
    match (v, ty) {
        (Value::Null, _) => true,
        (Value::Int(_), ScalarType::Int) => true,
        (Value::Decimal { scale, .. }, ScalarType::Decimal { scale: s }) => *scale == s,
        (Value::Text(_), ScalarType::Text) => true,
        (Value::Timestamp(_), ScalarType::Timestamp) => true,
        _ => false,
    }
}

/// Canonical encoding: fields sorted by column name, each
/// `u32 name_len | name | u8 tag | u32 value_len | value`, all big-endian.
pub fn encode_row(row: &[Value], schema: &TableSchema) -> Result<Vec<u8>, HashError> {
    if row.len() != schema.columns.len() {
        return Err(HashError::SchemaMismatch(schema.name.clone()));
    }
    let mut order: Vec<usize> = (0..row.len()).collect();
    order.sort_by(|&a, &b| schema.columns[a].name.cmp(&schema.columns[b].name));
    let mut out = Vec::new();
    let mut val = Vec::new();
    for i in order {
        let c = &schema.columns[i];
        if !conforms(&row[i], c.ty) {
            return Err(HashError::SchemaMismatch(schema.name.clone()));
        }
        out.extend_from_slice(&(c.name.len() as u32).to_be_bytes());
        out.extend_from_slice(c.name.as_bytes());
        out.push(row[i].type_tag());
        val.clear();
        value_bytes(&row[i], &mut val);
        out.extend_from_slice(&(val.len() as u32).to_be_bytes());
        out.extend_from_slice(&val);
    }
    Ok(out)
}

/// Inverse of `encode_row`. Returns values in schema column order.
pub fn decode_row(bytes: &[u8], schema: &TableSchema) -> Result<Vec<Value>, HashError> {
    let bad = || HashError::SchemaMismatch(schema.name.clone());
    let mut row = alloc::vec![None; schema.columns.len()];
    let mut p = 0usize;
    let mut take = |n: usize| -> Result<&[u8], HashError> {
        let s = bytes.get(p..p + n).ok_or_else(bad)?;
        p += n;
        Ok(s)
    };
    for _ in 0..schema.columns.len() {
        let n = u32::from_be_bytes(take(4)?.try_into().unwrap()) as usize;
        let name = core::str::from_utf8(take(n)?).map_err(|_| bad())?;
        let i = schema.col_index(name).ok_or_else(bad)?;
        let tag = take(1)?[0];
        let n = u32::from_be_bytes(take(4)?.try_into().unwrap()) as usize;
        let v = take(n)?;
        let int = |v: &[u8]| -> Result<i64, HashError> { Ok(i64::from_be_bytes(v.try_into().map_err(|_| bad())?)) };
        let val = match tag {
            0 if v.is_empty() => Value::Null,
            1 => Value::Int(int(v)?),
            2 if v.len() == 9 => Value::Decimal { scale: v[0], mantissa: int(&v[1..])? },
            3 => Value::text(core::str::from_utf8(v).map_err(|_| bad())?),
            4 => Value::Timestamp(int(v)?),
            _ => return Err(bad()),
        };
        if row[i].is_some() || !conforms(&val, schema.columns[i].ty) {
            return Err(bad());
        }
        row[i] = Some(val);
    }
    if p != bytes.len() {
        return Err(bad());
    }
    Ok(row.into_iter().map(|v| v.unwrap()).collect())
}

pub fn row_hash(row: &[Value], schema: &TableSchema) -> Result<TableHash, HashError> {
    let enc = encode_row(row, schema)?;
    Ok(TableHash::from_be_bytes(Sha256::digest(&enc).into()))
}

/// h' = h + Σ hash(ins) − Σ hash(del) (mod 2^256).
pub fn update_hash<'r, I, D>(h: TableHash, inserted: I, deleted: D, schema: &TableSchema) -> Result<TableHash, HashError>
where
    I: IntoIterator<Item = &'r [Value]>,
    D: IntoIterator<Item = &'r [Value]>,
{
    let mut h = h;
    for r in inserted {
        h = h.add(row_hash(r, schema)?);
    }
    for r in deleted {
        h = h.sub(row_hash(r, schema)?);
    }
    Ok(h)
}

/// Per-table append-only list of (commit idx, hash).
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct HashLedger {
    pub tables: BTreeMap<String, Vec<(u64, TableHash)>>,
}

impl HashLedger {
    pub fn record(&mut self, table: &str, idx: u64, h: TableHash) {
        let list = self.tables.entry(table.into()).or_default();
        match list.last_mut() {
            Some(last) if last.0 == idx => last.1 = h,
            Some(last) => {
                debug_assert!(last.0 < idx, "ledger indices must increase");
                list.push((idx, h));
            }
            None => list.push((idx, h)),
        }
    }

    /// Hash in effect at `idx`: the last entry at or before it, zero before the first entry.
    pub fn at(&self, table: &str, idx: u64) -> Result<TableHash, HashError> {
        let list = self
            .tables
            .get(table)
            .ok_or_else(|| HashError::LedgerGap { table: table.into(), idx })?;
        let p = list.partition_point(|(i, _)| *i <= idx);
        Ok(if p == 0 { TableHash::ZERO } else { list[p - 1].1 })
    }

    /// Flatten into (idx, table, hash) ordered by idx then table.
    pub fn entries(&self) -> Vec<(u64, String, TableHash)> {
        let mut v: Vec<(u64, String, TableHash)> = self
            .tables
            .iter()
            .flat_map(|(t, l)| l.iter().map(move |(i, h)| (*i, t.clone(), *h)))
            .collect();
        v.sort();
        v
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum JumpDecision {
    Continue,
    Jump { at: u64, matched: Vec<String> },
}

/// Jump iff every mutated table's live hash equals the ledger at `idx` and no
/// retro-divergent query remains beyond `idx`.
pub fn check_jump(
    ledger: &HashLedger,
    live: &BTreeMap<String, TableHash>,
    idx: u64,
    mutated: &BTreeSet<String>,
    divergent_remaining: bool,
) -> Result<JumpDecision, HashError> {
    if divergent_remaining {
        return Ok(JumpDecision::Continue);
    }
    let mut matched = Vec::new();
    for t in mutated {
        let want = ledger.at(t, idx)?;
        let have = live.get(t).copied().unwrap_or(TableHash::ZERO);
        if want != have {
            return Ok(JumpDecision::Continue);
        }
        matched.push(t.clone());
    }
    Ok(JumpDecision::Jump { at: idx, matched })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::{apply_ddl, Catalog};
    use crate::sql::parse;

    fn schema(s: &str) -> TableSchema {
        let c = apply_ddl(&Catalog::default(), &parse(s).unwrap(), 1).unwrap();
        (**c.tables.values().next().unwrap()).clone()
    }

    #[test]
    fn modular_arithmetic() {
        let max = TableHash([u64::MAX; 4]);
        let one = TableHash([1, 0, 0, 0]);
        assert_eq!(max.add(one), TableHash::ZERO);
        assert_eq!(TableHash::ZERO.sub(one), max);
        let x = TableHash([5, 7, 9, 11]);
        assert_eq!(x.add(max).sub(max), x);
        assert_eq!(TableHash::from_hex(&x.to_hex()), Some(x));
    }

    #[test]
    fn encoding_layout() {
        let s = schema("CREATE TABLE T (id INT, name TEXT)");
        let row = [Value::Int(1), Value::text("alice")];
        let enc = encode_row(&row, &s).unwrap();
        let mut want = Vec::new();
        want.extend_from_slice(&[0, 0, 0, 2]);
        want.extend_from_slice(b"id");
        want.push(1);
        want.extend_from_slice(&[0, 0, 0, 8, 0, 0, 0, 0, 0, 0, 0, 1]);
        want.extend_from_slice(&[0, 0, 0, 4]);
        want.extend_from_slice(b"name");
        want.push(3);
        want.extend_from_slice(&[0, 0, 0, 5]);
        want.extend_from_slice(b"alice");
        assert_eq!(enc, want);
        assert!(row_hash(&[Value::text("x"), Value::Int(1)], &s).is_err());
    }

    // Expected digests computed with Python's hashlib over the same byte layout.
    #[test]
    fn golden_row_hashes() {
        let s = schema("CREATE TABLE T (id INT, name TEXT)");
        let a = row_hash(&[Value::Int(1), Value::text("alice")], &s).unwrap();
        let b = row_hash(&[Value::Int(2), Value::text("bob")], &s).unwrap();
        assert_eq!(a.to_hex(), "16ad0d87be691dcd790a7b7c7ccee52dfe932126b7a973fcd073293a8e626a7a");
        assert_eq!(b.to_hex(), "6be88110e84f35507ca59aad8330db7f845fe1ce30b552669d87710fe2e1c966");
        assert_eq!(a.add(b).to_hex(), "82958e98a6b8531df5b01629ffffc0ad82f302f4e85ec6636dfa9a4a714433e0");
        let v = schema("CREATE TABLE V (amt DECIMAL(10,2), note TEXT, at TIMESTAMP)");
        let row = [Value::Decimal { mantissa: -150, scale: 2 }, Value::Null, Value::Timestamp(1_000_000)];
        assert_eq!(row_hash(&row, &v).unwrap().to_hex(), "f7f4be4c6a385e6aa7a9cd2f5e6c1d597b76a507ceab36c8fcadf459115b459b");
        assert_eq!(decode_row(&encode_row(&row, &v).unwrap(), &v).unwrap(), row.to_vec());
    }

    #[test]
    fn decode_rejects_garbage() {
        let s = schema("CREATE TABLE T (id INT, name TEXT)");
        let enc = encode_row(&[Value::Int(7), Value::text("x")], &s).unwrap();
        assert!(decode_row(&enc[..enc.len() - 1], &s).is_err());
        let mut more = enc.clone();
        more.push(0);
        assert!(decode_row(&more, &s).is_err());
    }

    #[test]
    fn insert_delete_inverse() {
        let s = schema("CREATE TABLE T (id INT, name TEXT)");
        let r: Vec<Value> = alloc::vec![Value::Int(3), Value::text("q")];
        let h0 = TableHash([1, 2, 3, 4]);
        let h1 = update_hash(h0, [r.as_slice()], [], &s).unwrap();
        assert_ne!(h0, h1);
        assert_eq!(update_hash(h1, [], [r.as_slice()], &s).unwrap(), h0);
    }

    #[test]
    fn ledger_lookup_and_jump() {
        let mut l = HashLedger::default();
        let h = TableHash([9, 0, 0, 0]);
        l.record("T", 3, h);
        assert_eq!(l.at("T", 2).unwrap(), TableHash::ZERO);
        assert_eq!(l.at("T", 10).unwrap(), h);
        assert!(l.at("U", 1).is_err());
        let mut live = BTreeMap::new();
        live.insert(String::from("T"), h);
        let m: BTreeSet<String> = [String::from("T")].into_iter().collect();
        assert!(matches!(check_jump(&l, &live, 5, &m, false).unwrap(), JumpDecision::Jump { at: 5, .. }));
        assert_eq!(check_jump(&l, &live, 5, &m, true).unwrap(), JumpDecision::Continue);
        live.insert(String::from("T"), TableHash::ZERO);
        assert_eq!(check_jump(&l, &live, 5, &m, false).unwrap(), JumpDecision::Continue);
    }
}
