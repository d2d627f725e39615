//! Command-line driver. Exit codes: 0 ok, 1 usage, 2 input error, 3 verification mismatch.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use log::{info, warn};
use retro_core::catalog::CatalogHistory;
use retro_core::cluster::{choose_cluster_columns, extract_k, ClusterConfig, KOptions};
use retro_core::engine::{analyze, compute_rws, digests, oracle_run, rewritten_log, run, History, RetroOutcome, RetroTarget};
use retro_core::exec::Database;
use retro_core::graph::TargetKind;
use retro_core::record::QueryRecord;
use retro_core::rw::RWSet;
use retro_core::sql::parse_statement;
use retro_core::store::{ingest, VersionedStore};
use retro_core::table::Row;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::CliError;
use crate::gen::{generate, Mix, Template, WorkloadSpec};
use crate::logfile::{parse_log, render_log, render_raw};
use crate::sched::ParallelScheduler;
use crate::sidecar::{parse_ledger, parse_rwk, render_ledger, render_rwk, RwkEntry};
use crate::snapshot;

#[derive(Debug, Parser)]
#[command(name = "retro", version, about = "Retroactive add/remove/change of committed SQL statements")]
pub struct Cli {
    /// JSON run configuration; flags override it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub cmd: Command,
}

#[derive(Debug, Clone, Default, Args)]
pub struct EngineArgs {
    /// Artifact directory.
    #[arg(long)]
    pub dir: Option<PathBuf>,
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long)]
    pub no_cluster: bool,
    #[arg(long)]
    pub no_hashjump: bool,
    #[arg(long)]
    pub literal_verify: bool,
    /// Also run the full oracle replay and compare digests.
    #[arg(long)]
    pub verify: bool,
    #[arg(long, value_delimiter = ',')]
    pub ignore_columns: Vec<String>,
    /// Implicit foreign key, `Table.col=Origin.key`. Repeatable.
    #[arg(long = "fk-hint")]
    pub fk_hints: Vec<String>,
    /// Let replay issue fresh AUTO_INCREMENT ids instead of keeping recorded ones.
    #[arg(long)]
    pub no_tombstone: bool,
    #[arg(long)]
    pub multi_key: bool,
    #[arg(long)]
    pub cadence: Option<usize>,
    /// Write per-phase timings to timings.json.
    #[arg(long)]
    pub timings: bool,
    /// Write graph.txt and scheme.txt for the operation.
    #[arg(long)]
    pub dump: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Execute a log and write sidecars and snapshots.
    Ingest {
        log: PathBuf,
        #[command(flatten)]
        engine: EngineArgs,
    },
    /// Retroactively add, remove or change a statement.
    Retro {
        #[command(subcommand)]
        op: RetroOp,
    },
    /// Generate a seeded workload log.
    Gen {
        #[arg(long)]
        template: Template,
        #[arg(long)]
        clusters: usize,
        #[arg(long)]
        queries: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Weights `read,insert,update,delete,call`.
        #[arg(long)]
        mix: Option<Mix>,
        #[arg(long)]
        out: PathBuf,
        /// Also write the suggested retroactive target as JSON.
        #[arg(long)]
        scenario: Option<PathBuf>,
    },
    /// Report on the last retroactive operation.
    Stats {
        #[arg(long)]
        dir: PathBuf,
    },
    ExportSnapshot {
        #[arg(long)]
        dir: PathBuf,
        #[arg(long)]
        table: String,
        #[arg(long)]
        out: PathBuf,
        /// Commit index; the current state when absent.
        #[arg(long)]
        at: Option<u64>,
    },
    ImportSnapshot {
        file: PathBuf,
        #[arg(long)]
        dir: PathBuf,
        /// Only compare against the state at this commit index.
        #[arg(long)]
        at: Option<u64>,
    },
}

#[derive(Debug, Subcommand)]
pub enum RetroOp {
    Add {
        idx: u64,
        /// File holding the new statement.
        #[arg(long)]
        sql: PathBuf,
        #[command(flatten)]
        engine: EngineArgs,
    },
    Remove {
        idx: u64,
        #[command(flatten)]
        engine: EngineArgs,
    },
    Change {
        idx: u64,
        #[arg(long)]
        sql: PathBuf,
        #[command(flatten)]
        engine: EngineArgs,
    },
}

pub fn main() -> i32 {
    let _ = env_logger::Builder::from_env(env_logger::Env::new().filter_or("RETRO_LOG_LEVEL", "warn"))
        .target(env_logger::Target::Stderr)
        .try_init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let mut out = std::io::stdout().lock();
    match execute(cli, &mut out) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}", e);
            e.exit_code()
        }
    }
}

pub fn execute(cli: Cli, out: &mut dyn Write) -> Result<(), CliError> {
    let base = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    match cli.cmd {
        Command::Ingest { log, engine } => cmd_ingest(&log, &merge(base, &engine)?, out),
        Command::Retro { op } => {
            let (kind, idx, sql, engine) = match op {
                RetroOp::Add { idx, sql, engine } => (TargetKind::Add, idx, Some(sql), engine),
                RetroOp::Remove { idx, engine } => (TargetKind::Remove, idx, None, engine),
                RetroOp::Change { idx, sql, engine } => (TargetKind::Change, idx, Some(sql), engine),
            };
            let cfg = merge(base, &engine)?;
            let sql = sql.map(|p| read_sql(&p)).transpose()?;
            let target = RetroTarget { kind, idx, sql };
            cmd_retro(&target, &cfg, engine.dump, out).map(|_| ())
        }
        Command::Gen { template, clusters, queries, seed, mix, out: path, scenario } => {
            let spec = WorkloadSpec { seed, template, clusters, queries, mix: mix.unwrap_or_default() };
            cmd_gen(&spec, &path, scenario.as_deref(), out)
        }
        Command::Stats { dir } => cmd_stats(&dir, out),
        Command::ExportSnapshot { dir, table, out: path, at } => cmd_export(&dir, &table, &path, at, &base, out),
        Command::ImportSnapshot { file, dir, at } => cmd_import(&file, &dir, at, &base, out),
    }
}

fn merge(mut c: RunConfig, a: &EngineArgs) -> Result<RunConfig, CliError> {
    if a.dir.is_some() {
        c.dir = a.dir.clone();
    }
    if let Some(w) = a.workers {
        c.workers = w;
    }
    if let Some(s) = a.cadence {
        c.cadence = s;
    }
    c.clustering &= !a.no_cluster;
    c.hashjump &= !a.no_hashjump;
    c.tombstone &= !a.no_tombstone;
    c.literal_verify |= a.literal_verify;
    c.verify |= a.verify;
    c.multi_key |= a.multi_key;
    c.timings |= a.timings;
    c.ignore_columns.extend(a.ignore_columns.iter().filter(|s| !s.is_empty()).cloned());
    c.fk_hints.extend(a.fk_hints.iter().cloned());
    c.validate()?;
    Ok(c)
}

fn read_sql(p: &Path) -> Result<String, CliError> {
    let s = std::fs::read_to_string(p).map_err(CliError::io(p))?;
    let s = s.trim();
    Ok(s.strip_suffix(';').unwrap_or(s).trim_end().to_string())
}

fn dir_of(cfg: &RunConfig) -> Result<&Path, CliError> {
    cfg.dir.as_deref().ok_or_else(|| CliError::Usage("--dir is required".into()))
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<(), CliError> {
    std::fs::write(path, bytes).map_err(CliError::io(path))
}

/// Paths inside an artifact directory.
pub struct Artifacts {
    pub root: PathBuf,
}

impl Artifacts {
    pub fn new(root: &Path) -> Self {
        Artifacts { root: root.into() }
    }
    pub fn log(&self) -> PathBuf {
        self.root.join("log.jsonl")
    }
    pub fn rwk(&self) -> PathBuf {
        self.root.join("rwk.jsonl")
    }
    pub fn ledger(&self) -> PathBuf {
        self.root.join("ledger.jsonl")
    }
    pub fn snapshots(&self) -> PathBuf {
        self.root.join("snapshots")
    }
    pub fn snapshot(&self, table: &str) -> PathBuf {
        self.snapshots().join(format!("{}.snap", table))
    }
    pub fn stats(&self) -> PathBuf {
        self.root.join("stats.json")
    }
    pub fn timings(&self) -> PathBuf {
        self.root.join("timings.json")
    }

    fn require(&self, paths: &[PathBuf]) -> Result<(), CliError> {
        let missing: Vec<String> = paths.iter().filter(|p| !p.exists()).map(|p| p.display().to_string()).collect();
        if missing.is_empty() {
            Ok(())
        } else {
            Err(CliError::MissingArtifacts(missing.join(", ")))
        }
    }
}

/// An executed log with its analysis.
pub struct Loaded {
    pub records: Vec<QueryRecord>,
    pub hist: CatalogHistory,
    pub store: VersionedStore,
    pub rws: BTreeMap<u64, RWSet>,
}

impl Loaded {
    pub fn h(&self) -> History<'_> {
        History { records: &self.records, store: &self.store, rws: &self.rws }
    }
}

#[derive(Debug, Default, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Timings {
    pub parse_ms: f64,
    pub execute_ms: f64,
    pub analyze_ms: f64,
    pub retro_ms: f64,
    pub oracle_ms: Option<f64>,
    pub write_ms: f64,
}

fn ms(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

fn load_text(text: &str, path: &Path, cadence: usize, t: &mut Timings) -> Result<Loaded, CliError> {
    let t0 = Instant::now();
    let raw = parse_log(text).map_err(|err| CliError::Log { path: path.into(), err })?;
    let (mut records, hist) = retro_core::record::build_log(raw, Default::default()).map_err(|err| CliError::Log { path: path.into(), err })?;
    t.parse_ms += ms(t0);
    let t0 = Instant::now();
    let store = ingest(&mut records, cadence)?;
    t.execute_ms += ms(t0);
    let t0 = Instant::now();
    let rws = compute_rws(&records, &hist)?;
    t.analyze_ms += ms(t0);
    Ok(Loaded { records, hist, store, rws })
}

fn rwk_entries(l: &Loaded, cfg: &RunConfig) -> Result<Vec<RwkEntry>, CliError> {
    let (Some(first), Some(last)) = (l.records.first(), l.records.last()) else { return Ok(Vec::new()) };
    let opts = cfg.options()?;
    let kopts = KOptions { tombstone: cfg.tombstone };
    let ccfg = ClusterConfig { hints: opts.fk_hints.clone(), opts: Some(kopts), multi: cfg.multi_key };
    let c = choose_cluster_columns(&l.records, &l.rws, &l.hist, (first.idx, last.idx), None, &ccfg);
    info!("whole-log cluster key: {:?}", c.scheme.keys);
    Ok(l
        .records
        .iter()
        .map(|r| {
            let k = extract_k(&r.stmt, l.hist.as_of(r.idx - 1), &c.scheme, &c.aliases, kopts);
            RwkEntry::new(r.idx, &l.rws[&r.idx], &k)
        })
        .collect())
}

/// Write log, sidecars and current-state snapshots for `l`, with `state` as the
/// current state (the log's own final state when `None`).
fn write_artifacts(a: &Artifacts, l: &Loaded, state: Option<&Database>, cfg: &RunConfig) -> Result<(), CliError> {
    std::fs::create_dir_all(&a.root).map_err(CliError::io(&a.root))?;
    write_file(&a.log(), render_log(&l.records))?;
    write_file(&a.rwk(), render_rwk(&rwk_entries(l, cfg)?))?;
    write_file(&a.ledger(), render_ledger(&l.store.ledger))?;
    let snaps = a.snapshots();
    if snaps.exists() {
        std::fs::remove_dir_all(&snaps).map_err(CliError::io(&snaps))?;
    }
    std::fs::create_dir_all(&snaps).map_err(CliError::io(&snaps))?;
    let db = state.unwrap_or(&l.store.current);
    for (name, schema) in &db.catalog.tables {
        write_file(&a.snapshot(name), snapshot::export_arc(schema, db.tables.get(name)))?;
    }
    Ok(())
}

pub fn cmd_ingest(log: &Path, cfg: &RunConfig, out: &mut dyn Write) -> Result<(), CliError> {
    let a = Artifacts::new(dir_of(cfg)?);
    let text = std::fs::read_to_string(log).map_err(CliError::io(log))?;
    let mut t = Timings::default();
    let l = load_text(&text, log, cfg.cadence, &mut t)?;
    let t0 = Instant::now();
    write_artifacts(&a, &l, None, cfg)?;
    t.write_ms = ms(t0);
    let n = l.records.len();
    let aborted = l.store.effects().iter().filter(|(_, e)| e.aborted.is_some()).count();
    let entries: usize = l.store.ledger.tables.values().map(Vec::len).sum();
    let per = |x: f64| if n == 0 { 0.0 } else { x * 1e3 / n as f64 };
    writeln!(out, "ingested {} records ({} aborted), {} ledger entries, {} tables", n, aborted, entries, l.store.current.tables.len()).ok();
    writeln!(out, "per-query overhead: parse {:.1} us, execute+hash {:.1} us, r/w analysis {:.1} us", per(t.parse_ms), per(t.execute_ms), per(t.analyze_ms)).ok();
    if cfg.timings {
        write_file(&a.timings(), serde_json::to_string_pretty(&t).unwrap() + "\n")?;
    }
    Ok(())
}

fn load_dir(a: &Artifacts, cfg: &RunConfig, t: &mut Timings) -> Result<Loaded, CliError> {
    a.require(&[a.log(), a.rwk(), a.ledger()])?;
    let text = std::fs::read_to_string(a.log()).map_err(CliError::io(a.log()))?;
    let l = load_text(&text, &a.log(), cfg.cadence, t)?;
    let rwk_text = std::fs::read_to_string(a.rwk()).map_err(CliError::io(a.rwk()))?;
    let rwk = parse_rwk(&rwk_text, &a.rwk())?;
    let want: Vec<u64> = l.records.iter().map(|r| r.idx).collect();
    let have: Vec<u64> = rwk.iter().map(|e| e.idx).collect();
    if want != have {
        return Err(CliError::Sidecar { path: a.rwk(), line: 0, msg: "does not match the log; re-run ingest".into() });
    }
    let ledger_text = std::fs::read_to_string(a.ledger()).map_err(CliError::io(a.ledger()))?;
    if parse_ledger(&ledger_text, &a.ledger())? != l.store.ledger {
        warn!("{} differs from the re-executed log", a.ledger().display());
    }
    Ok(l)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetDoc {
    pub kind: String,
    pub idx: u64,
    pub sql: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptionsDoc {
    pub clustering: bool,
    pub hashjump: bool,
    pub literal_verify: bool,
    pub tombstone: bool,
    pub workers: usize,
    pub ignore_columns: Vec<String>,
}

/// Contents of stats.json.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StatsDoc {
    pub target: TargetDoc,
    pub window: [u64; 2],
    pub window_queries: usize,
    pub i_size: usize,
    pub ik_size: usize,
    pub replayed: usize,
    pub jump_idx: Option<u64>,
    pub reduction_rate: f64,
    pub baseline: String,
    pub denominator: usize,
    pub fallback: bool,
    pub scheme: Vec<String>,
    pub pruned: usize,
    pub plan_nodes: usize,
    pub plan_edges: usize,
    pub target_aborted: Option<String>,
    pub verified: Option<bool>,
    pub options: OptionsDoc,
    pub digests: BTreeMap<String, String>,
}

pub const BASELINE: &str = "full replay of the window's non-read-only statements";

fn kind_name(k: TargetKind) -> &'static str {
    match k {
        TargetKind::Add => "add",
        TargetKind::Remove => "remove",
        TargetKind::Change => "change",
    }
}

fn stats_doc(t: &RetroTarget, out: &RetroOutcome, cfg: &RunConfig, verified: Option<bool>) -> StatsDoc {
    let s = &out.stats;
    StatsDoc {
        target: TargetDoc { kind: kind_name(t.kind).into(), idx: t.idx, sql: t.sql.clone() },
        window: [s.window.0, s.window.1],
        window_queries: s.window_queries,
        i_size: s.i_size,
        ik_size: s.ik_size,
        replayed: s.replayed,
        jump_idx: s.jump_idx,
        reduction_rate: s.reduction_rate,
        baseline: BASELINE.into(),
        denominator: s.denominator,
        fallback: s.fallback,
        scheme: s.scheme.clone(),
        pruned: s.pruned,
        plan_nodes: s.plan_nodes,
        plan_edges: s.plan_edges,
        target_aborted: s.target_aborted.clone(),
        verified,
        options: OptionsDoc {
            clustering: cfg.clustering,
            hashjump: cfg.hashjump,
            literal_verify: cfg.literal_verify,
            tombstone: cfg.tombstone,
            workers: cfg.workers,
            ignore_columns: cfg.ignore_columns.clone(),
        },
        digests: out.digests.clone(),
    }
}

/// Tables whose state differs; tables with ignored columns are compared on the
/// remaining columns.
fn diff_states(a: &Database, b: &Database, ignore: &BTreeSet<retro_core::rw::ColumnRef>) -> Vec<String> {
    let da = digests(a);
    let db = digests(b);
    let names: BTreeSet<&String> = da.keys().chain(db.keys()).collect();
    let mut out = Vec::new();
    for n in names {
        let keep: Option<Vec<usize>> = a.catalog.table(n).filter(|_| ignore.iter().any(|c| &c.table == n)).map(|s| {
            (0..s.columns.len()).filter(|&i| !ignore.iter().any(|c| &c.table == n && c.column == s.columns[i].name)).collect()
        });
        let same = match (&keep, a.catalog.table(n) == b.catalog.table(n)) {
            (Some(k), true) => {
                let proj = |d: &Database| -> BTreeMap<Vec<retro_core::value::Value>, u32> {
                    let mut m = BTreeMap::new();
                    if let Some(t) = d.tables.get(n) {
                        for r in t.iter() {
                            let r: &Row = r;
                            *m.entry(k.iter().map(|&i| r[i].clone()).collect()).or_insert(0) += 1;
                        }
                    }
                    m
                };
                proj(a) == proj(b)
            }
            _ => da.get(n) == db.get(n),
        };
        if !same {
            out.push(n.clone());
        }
    }
    out
}

/// Runs the operation; on success rewrites the artifact directory and returns the stats.
pub fn cmd_retro(target: &RetroTarget, cfg: &RunConfig, dump: bool, out: &mut dyn Write) -> Result<StatsDoc, CliError> {
    let a = Artifacts::new(dir_of(cfg)?);
    let opts = cfg.options()?;
    let mut t = Timings::default();
    let l = load_dir(&a, cfg, &mut t)?;
    let t0 = Instant::now();
    let res = run(&l.h(), target, &opts, &ParallelScheduler::new(cfg.workers))?;
    t.retro_ms = ms(t0);
    let db = res.database(&l.store);
    let mut verified = None;
    if cfg.verify {
        let t0 = Instant::now();
        let o = oracle_run(&l.h(), target, opts.autoinc)?;
        t.oracle_ms = Some(ms(t0));
        let bad = diff_states(&db, &o.db, &opts.ignore_columns);
        if !bad.is_empty() {
            let od = o.digests();
            eprintln!("digest mismatch in {}", bad.join(", "));
            for n in &bad {
                eprintln!("  {}: retro {} oracle {}", n, res.digests.get(n).map_or("-", String::as_str), od.get(n).map_or("-", String::as_str));
            }
            return Err(CliError::VerifyMismatch(bad.len()));
        }
        verified = Some(true);
    }
    if dump {
        let an = analyze(&l.h(), target, &opts)?;
        write_file(&a.root.join("graph.txt"), an.graph.dump(Some(&an.replay_set)))?;
        write_file(&a.root.join("scheme.txt"), an.clustering.as_ref().map(|c| c.scheme.dump()).unwrap_or_default())?;
    }
    let t0 = Instant::now();
    let new_log = next_log(&l, target)?;
    let mut scratch = Timings::default();
    let next = load_text(&render_log(&new_log), &a.log(), cfg.cadence, &mut scratch)?;
    if digests(&next.store.current) != res.digests {
        warn!("the rewritten log does not reproduce the new state (AUTO_INCREMENT ids kept as tombstones); snapshots hold the new state");
    }
    write_artifacts(&a, &next, Some(&db), cfg)?;
    let doc = stats_doc(target, &res, cfg, verified);
    write_file(&a.stats(), serde_json::to_string_pretty(&doc).unwrap() + "\n")?;
    t.write_ms = ms(t0);
    if cfg.timings {
        write_file(&a.timings(), serde_json::to_string_pretty(&t).unwrap() + "\n")?;
    }
    info!("timings: {:?}", t);
    writeln!(out, "{}", serde_json::to_string(&doc).unwrap()).ok();
    Ok(doc)
}

/// The log after the operation, renumbered only where an added statement collides.
fn next_log(l: &Loaded, target: &RetroTarget) -> Result<Vec<QueryRecord>, CliError> {
    let new = match &target.sql {
        Some(sql) => {
            let tau = target.idx;
            let stmt = parse_statement(sql, l.store.catalog_at(tau - 1), tau)?;
            let ts = l.records.iter().find(|r| r.idx >= tau).or(l.records.last()).map(|r| r.ts).unwrap_or(0);
            Some(QueryRecord { idx: tau, ts, session: "retro".into(), text: sql.clone(), stmt, nondet: Vec::new() })
        }
        None => None,
    };
    let mut recs = rewritten_log(&l.records, target, new);
    for i in 1..recs.len() {
        if recs[i].idx <= recs[i - 1].idx {
            recs[i].idx = recs[i - 1].idx + 1;
        }
    }
    Ok(recs)
}

pub fn cmd_gen(spec: &WorkloadSpec, path: &Path, scenario: Option<&Path>, out: &mut dyn Write) -> Result<(), CliError> {
    let w = generate(spec)?;
    write_file(path, render_raw(&w.records))?;
    if let Some(p) = scenario {
        write_file(p, serde_json::to_string_pretty(&w.scenario).unwrap() + "\n")?;
    }
    writeln!(out, "wrote {} records ({} template, {} clusters, seed {}) to {}", w.records.len(), spec.template, spec.clusters, spec.seed, path.display()).ok();
    Ok(())
}

pub fn cmd_stats(dir: &Path, out: &mut dyn Write) -> Result<(), CliError> {
    let a = Artifacts::new(dir);
    a.require(&[a.stats()])?;
    let text = std::fs::read_to_string(a.stats()).map_err(CliError::io(a.stats()))?;
    let doc: StatsDoc = serde_json::from_str(&text).map_err(|e| CliError::Sidecar { path: a.stats(), line: e.line(), msg: e.to_string() })?;
    let timings: Option<Timings> = match std::fs::read_to_string(a.timings()) {
        Ok(t) => Some(serde_json::from_str(&t).map_err(|e| CliError::Sidecar { path: a.timings(), line: e.line(), msg: e.to_string() })?),
        Err(_) => None,
    };
    let mut s = String::new();
    s += &format!("target: {} {}\n", doc.target.kind, doc.target.idx);
    s += &format!("window: {}..{} ({} statements, {} non-read-only)\n", doc.window[0], doc.window[1], doc.window_queries, doc.denominator);
    s += &format!("replay set: {} column-wise, {} after clustering\n", doc.i_size, doc.ik_size);
    s += &format!("replayed: {} of {} ({})\n", doc.replayed, doc.denominator, doc.baseline);
    s += &format!("reduction rate: {:.2}%\n", doc.reduction_rate * 100.0);
    s += &match doc.jump_idx {
        Some(j) => format!("hash-jump: taken at {}\n", j),
        None => "hash-jump: not taken\n".into(),
    };
    if doc.fallback {
        s += "plan: full serial replay (schema change in the window)\n";
    } else {
        s += &format!("plan: {} nodes, {} edges\n", doc.plan_nodes, doc.plan_edges);
    }
    if !doc.scheme.is_empty() {
        s += &format!("cluster key: {}\n", doc.scheme.join(", "));
    }
    if let Some(v) = doc.verified {
        s += &format!("verified against oracle: {}\n", v);
    }
    match &timings {
        Some(t) => {
            s += &format!(
                "timings (ms): parse {:.2}, execute {:.2}, analyze {:.2}, retro {:.2}, oracle {}, write {:.2}\n",
                t.parse_ms,
                t.execute_ms,
                t.analyze_ms,
                t.retro_ms,
                t.oracle_ms.map_or("-".into(), |x| format!("{:.2}", x)),
                t.write_ms
            )
        }
        None => s += "timings: not recorded (run with --timings)\n",
    }
    out.write_all(s.as_bytes()).ok();
    let mut json = serde_json::to_value(&doc).unwrap();
    if let Some(t) = timings {
        json["timings"] = serde_json::to_value(t).unwrap();
    }
    writeln!(out, "{}", serde_json::to_string(&json).unwrap()).ok();
    Ok(())
}

fn snapshot_err(path: &Path, e: impl ToString) -> CliError {
    CliError::Snapshot { path: path.into(), msg: e.to_string() }
}

pub fn cmd_export(dir: &Path, table: &str, path: &Path, at: Option<u64>, base: &RunConfig, out: &mut dyn Write) -> Result<(), CliError> {
    let a = Artifacts::new(dir);
    let bytes = match at {
        None => {
            let p = a.snapshot(table);
            a.require(std::slice::from_ref(&p))?;
            std::fs::read(&p).map_err(CliError::io(&p))?
        }
        Some(idx) => {
            let l = load_dir(&a, base, &mut Timings::default())?;
            if idx < l.store.first_idx || idx > l.store.last_idx() {
                return Err(snapshot_err(path, format!("index {} outside the log", idx)));
            }
            let schema = l.store.catalog_at(idx).table(table).cloned().ok_or_else(|| snapshot_err(path, format!("no table `{}` at {}", table, idx)))?;
            let data = l.store.as_of(table, idx).map_err(|e| snapshot_err(path, e))?;
            snapshot::export_arc(&schema, data.as_ref())
        }
    };
    write_file(path, &bytes)?;
    writeln!(out, "wrote {} ({} bytes)", path.display(), bytes.len()).ok();
    Ok(())
}

pub fn cmd_import(file: &Path, dir: &Path, at: Option<u64>, base: &RunConfig, out: &mut dyn Write) -> Result<(), CliError> {
    let a = Artifacts::new(dir);
    let bytes = std::fs::read(file).map_err(CliError::io(file))?;
    let l = load_dir(&a, base, &mut Timings::default())?;
    let idx = at.unwrap_or_else(|| l.store.last_idx());
    let cat = l.store.catalog_at(idx);
    let (name, data) = snapshot::import(&bytes, cat).map_err(|e| snapshot_err(file, e))?;
    let schema = cat.table(&name).expect("import checked the table");
    let h = data.hash(schema).map_err(|e| snapshot_err(file, e))?;
    let digest = retro_core::engine::table_digest(schema, h);
    let logged = l.store.as_of(&name, idx).map_err(|e| snapshot_err(file, e))?.map(|d| d.hash(schema)).transpose().map_err(|e| snapshot_err(file, e))?.unwrap_or_default();
    let verdict = if logged == h { "matches" } else { "differs from" };
    writeln!(out, "{}: {} rows, digest {}, {} the log state at {}", name, data.len(), digest, verdict, idx).ok();
    if at.is_none() {
        write_file(&a.snapshot(&name), &bytes)?;
        writeln!(out, "installed as the current state of {}", name).ok();
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::parse_column;

    #[test]
    fn flags_override_config() {
        let a = EngineArgs { workers: Some(8), no_cluster: true, ignore_columns: vec!["T.dbg".into()], ..Default::default() };
        let c = merge(RunConfig { workers: 2, ..Default::default() }, &a).unwrap();
        assert_eq!(c.workers, 8);
        assert!(!c.clustering);
        assert!(c.hashjump);
        assert_eq!(c.options().unwrap().ignore_columns.into_iter().collect::<Vec<_>>(), vec![parse_column("T.dbg").unwrap()]);
        assert!(merge(RunConfig::default(), &EngineArgs { workers: Some(0), ..Default::default() }).is_err());
    }

    #[test]
    fn clap_definition() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
