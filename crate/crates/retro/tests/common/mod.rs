#![allow(dead_code)]

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use retro::gen::{generate, Mix, Template, WorkloadSpec};
use retro::logfile::{parse_records, render_raw};
use retro_core::catalog::CatalogHistory;
use retro_core::engine::{compute_rws, oracle_run, History, RetroOptions, RetroTarget};
use retro_core::error::EngineError;
use retro_core::record::QueryRecord;
use retro_core::rw::RWSet;
use retro_core::sql::Statement;
use retro_core::store::{ingest, VersionedStore};

pub struct Loaded {
    pub records: Vec<QueryRecord>,
    pub hist: CatalogHistory,
    pub store: VersionedStore,
    pub rws: BTreeMap<u64, RWSet>,
}

impl Loaded {
    pub fn from_stmts(stmts: &[&str]) -> Self {
        let text: String = stmts
            .iter()
            .enumerate()
            .map(|(i, s)| serde_json::json!({"idx": i + 1, "ts": format!("2024-01-01T00:00:{:02}Z", i % 60), "session": "s", "stmt": s}).to_string() + "\n")
            .collect();
        Loaded::from_text(&text)
    }

    pub fn from_text(text: &str) -> Self {
        let (mut records, hist) = parse_records(text).unwrap();
        let store = ingest(&mut records, 32).unwrap();
        let rws = compute_rws(&records, &hist).unwrap();
        Loaded { records, hist, store, rws }
    }

    pub fn generated(template: Template, clusters: usize, queries: usize, seed: u64) -> Self {
        let w = generate(&WorkloadSpec { seed, template, clusters, queries, mix: Mix::default() }).unwrap();
        Loaded::from_text(&render_raw(&w.records))
    }

    pub fn h(&self) -> History<'_> {
        History { records: &self.records, store: &self.store, rws: &self.rws }
    }
}

/// A random add, remove or change whose statement parses at its position.
pub fn random_target(l: &Loaded, rng: &mut ChaCha8Rng) -> RetroTarget {
    let last = l.records.last().unwrap().idx;
    let dml: Vec<&str> = l
        .records
        .iter()
        .filter(|r| matches!(r.stmt, Statement::Insert(_) | Statement::Update(_) | Statement::Delete(_) | Statement::CallProcedure(..)))
        .map(|r| r.text.as_str())
        .collect();
    loop {
        let idx = rng.gen_range(1..=last);
        let t = match rng.gen_range(0..3) {
            0 => RetroTarget::remove(idx),
            1 => RetroTarget::add(rng.gen_range(1..=last + 1), dml[rng.gen_range(0..dml.len())]),
            _ => RetroTarget::change(idx, dml[rng.gen_range(0..dml.len())]),
        };
        match oracle_run(&l.h(), &t, RetroOptions::default().autoinc) {
            Ok(_) => return t,
            Err(EngineError::Sql(_)) => continue,
            Err(e) => panic!("oracle failed on {:?}: {}", t, e),
        }
    }
}
