//! Table snapshot files.
//!
//! Layout, big-endian: `u32 version | u32 name_len | name | [u8; 32] schema digest |
//! u64 row count`, then per row `u32 len | canonical row encoding`.

use std::sync::Arc;

use retro_core::catalog::{Catalog, TableSchema};
use retro_core::hash::{decode_row, encode_row};
use retro_core::table::{Row, TableData};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SnapshotError {
    #[error("truncated at byte {0}")]
    Truncated(usize),
    #[error("unsupported format version {0}")]
    Version(u32),
    #[error("table `{0}` not in the catalog")]
    UnknownTable(String),
    #[error("schema digest of `{0}` does not match the catalog")]
    SchemaDigest(String),
    #[error("row {0} does not decode under the schema")]
    BadRow(u64),
    #[error("duplicate primary key at row {0}")]
    DuplicateKey(u64),
    #[error("{0} trailing bytes")]
    Trailing(usize),
}

pub fn export(schema: &TableSchema, data: &TableData) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&FORMAT_VERSION.to_be_bytes());
    out.extend_from_slice(&(schema.name.len() as u32).to_be_bytes());
    out.extend_from_slice(schema.name.as_bytes());
    out.extend_from_slice(&schema.digest());
    out.extend_from_slice(&(data.len() as u64).to_be_bytes());
    for r in data.iter() {
        let enc = encode_row(r, schema).expect("stored rows conform to schema");
        out.extend_from_slice(&(enc.len() as u32).to_be_bytes());
        out.extend_from_slice(&enc);
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], SnapshotError> {
        let s = self.buf.get(self.pos..self.pos + n).ok_or(SnapshotError::Truncated(self.pos))?;
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, SnapshotError> {
        Ok(u32::from_be_bytes(self.take(4)?.try_into().unwrap()))
    }
}

/// Table name and contents. The AUTO_INCREMENT counter restarts at the largest stored id.
pub fn import(bytes: &[u8], catalog: &Catalog) -> Result<(String, TableData), SnapshotError> {
    let mut r = Reader { buf: bytes, pos: 0 };
    let v = r.u32()?;
    if v != FORMAT_VERSION {
        return Err(SnapshotError::Version(v));
    }
    let n = r.u32()? as usize;
    let name = String::from_utf8_lossy(r.take(n)?).into_owned();
    let schema = catalog.table(&name).ok_or_else(|| SnapshotError::UnknownTable(name.clone()))?;
    if r.take(32)? != schema.digest() {
        return Err(SnapshotError::SchemaDigest(name));
    }
    let rows = u64::from_be_bytes(r.take(8)?.try_into().unwrap());
    let mut data = TableData::for_schema(schema);
    let auto = schema.auto_increment_column();
    for i in 0..rows {
        let n = r.u32()? as usize;
        let row: Row = decode_row(r.take(n)?, schema).map_err(|_| SnapshotError::BadRow(i))?.into();
        if data.has_pk() && data.get_by_pk(&data.key_of(&row)).is_some() {
            return Err(SnapshotError::DuplicateKey(i));
        }
        if let Some(id) = auto.and_then(|c| row[c].as_int()) {
            data.counter = data.counter.max(id);
        }
        data.insert(row);
    }
    if r.pos != bytes.len() {
        return Err(SnapshotError::Trailing(bytes.len() - r.pos));
    }
    Ok((name, data))
}

pub fn export_arc(schema: &Arc<TableSchema>, data: Option<&Arc<TableData>>) -> Vec<u8> {
    match data {
        Some(d) => export(schema, d),
        None => export(schema, &TableData::for_schema(schema)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use retro_core::catalog::apply_ddl;
    use retro_core::sql::parse;
    use retro_core::value::Value;

    fn cat(sql: &str) -> Catalog {
        apply_ddl(&Catalog::default(), &parse(sql).unwrap(), 1).unwrap()
    }

    fn table(c: &Catalog) -> TableData {
        let s = c.table("T").unwrap();
        let mut d = TableData::for_schema(s);
        for (id, name) in [(3, Value::text("c")), (1, Value::Null), (2, Value::text("b"))] {
            d.insert(vec![Value::Int(id), name].into());
        }
        d
    }

    #[test]
    fn round_trip() {
        let c = cat("CREATE TABLE T (id INT PRIMARY KEY AUTO_INCREMENT, name TEXT)");
        let d = table(&c);
        let bytes = export(c.table("T").unwrap(), &d);
        assert_eq!(&bytes[..4], &[0, 0, 0, 1]);
        assert_eq!(&bytes[8..9], b"T");
        let (name, back) = import(&bytes, &c).unwrap();
        assert_eq!(name, "T");
        assert_eq!(back.multiset(), d.multiset());
        assert_eq!(back.counter, 3);
        assert_eq!(export(c.table("T").unwrap(), &back), bytes);
    }

    #[test]
    fn rejects_mismatches() {
        let c = cat("CREATE TABLE T (id INT PRIMARY KEY AUTO_INCREMENT, name TEXT)");
        let bytes = export(c.table("T").unwrap(), &table(&c));
        let other = cat("CREATE TABLE T (id INT PRIMARY KEY, name TEXT, extra INT)");
        assert_eq!(import(&bytes, &other).unwrap_err(), SnapshotError::SchemaDigest("T".into()));
        assert_eq!(import(&bytes, &Catalog::default()).unwrap_err(), SnapshotError::UnknownTable("T".into()));
        assert!(matches!(import(&bytes[..bytes.len() - 2], &c), Err(SnapshotError::Truncated(_))));
        let mut v = bytes.clone();
        v[3] = 9;
        assert_eq!(import(&v, &c).unwrap_err(), SnapshotError::Version(9));
        let mut long = bytes.clone();
        long.push(0);
        assert_eq!(import(&long, &c).unwrap_err(), SnapshotError::Trailing(1));
    }
}
