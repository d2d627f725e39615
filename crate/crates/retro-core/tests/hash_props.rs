use std::sync::Arc;

use proptest::prelude::*;
use retro_core::catalog::{apply_ddl, Catalog, TableSchema};
use retro_core::hash::{decode_row, encode_row, row_hash, update_hash, TableHash};
use retro_core::sql::parse;
use retro_core::table::TableData;
use retro_core::value::Value;

fn schema() -> TableSchema {
    let c = apply_ddl(&Catalog::default(), &parse("CREATE TABLE T (id INT, name TEXT, at TIMESTAMP)").unwrap(), 1).unwrap();
    (**c.tables.values().next().unwrap()).clone()
}

fn row() -> impl Strategy<Value = Vec<Value>> {
    (
        prop_oneof![Just(Value::Null), any::<i64>().prop_map(Value::Int)],
        prop_oneof![Just(Value::Null), "[a-z']{0,12}".prop_map(|s| Value::Text(Arc::from(s.as_str())))],
        prop_oneof![Just(Value::Null), (0i64..4_000_000_000_000_000).prop_map(Value::Timestamp)],
    )
        .prop_map(|(a, b, c)| vec![a, b, c])
}

fn batch(rows: &[Vec<Value>], s: &TableSchema) -> TableHash {
    let mut t = TableData::for_schema(s);
    for r in rows {
        t.insert(Arc::from(r.as_slice()));
    }
    t.hash(s).unwrap()
}

#[test]
fn incremental_matches_batch_over_ten_thousand_effects() {
    let s = schema();
    let mut rng = 0x9e37_79b9_7f4a_7c15u64;
    let mut next = || {
        rng ^= rng << 13;
        rng ^= rng >> 7;
        rng ^= rng << 17;
        rng
    };
    let mut live: Vec<Vec<Value>> = Vec::new();
    let mut h = TableHash::ZERO;
    for i in 0..12_000 {
        if !live.is_empty() && next() % 3 == 0 {
            let r = live.swap_remove((next() % live.len() as u64) as usize);
            h = update_hash(h, None, Some(r.as_slice()), &s).unwrap();
        } else {
            let r = vec![Value::Int((next() % 500) as i64), Value::Text(Arc::from(format!("n{}", next() % 7).as_str())), Value::Timestamp(i)];
            h = update_hash(h, Some(r.as_slice()), None, &s).unwrap();
            live.push(r);
        }
    }
    assert_eq!(h, batch(&live, &s));
}

proptest! {
    #[test]
    fn order_does_not_matter(rows in proptest::collection::vec(row(), 0..40)) {
        let s = schema();
        let mut rev = rows.clone();
        rev.reverse();
        prop_assert_eq!(batch(&rows, &s), batch(&rev, &s));
    }

    #[test]
    fn insert_then_delete_is_identity(base in proptest::collection::vec(row(), 0..20), extra in row()) {
        let s = schema();
        let h0 = batch(&base, &s);
        let h1 = update_hash(h0, Some(extra.as_slice()), None, &s).unwrap();
        prop_assert_eq!(h1, h0.add(row_hash(&extra, &s).unwrap()));
        let h2 = update_hash(h1, None, Some(extra.as_slice()), &s).unwrap();
        prop_assert_eq!(h2, h0);
    }

    #[test]
    fn rows_round_trip(r in row()) {
        let s = schema();
        let bytes = encode_row(&r, &s).unwrap();
        prop_assert_eq!(decode_row(&bytes, &s).unwrap(), r);
    }

    #[test]
    fn hex_round_trip(b in any::<[u8; 32]>()) {
        let h = TableHash::from_be_bytes(b);
        prop_assert_eq!(TableHash::from_hex(&h.to_hex()), Some(h));
        prop_assert_eq!(h.sub(h), TableHash::ZERO);
    }
}
