//! Seeded workload generator.
//!
//! Application transactions are emitted as stored procedures plus CALLs. Logs
//! carry no recorded non-deterministic values; ingest fills them in.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use retro_core::record::RawRecord;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

/// 2024-01-01T00:00:00Z in microseconds.
pub const BASE_TS: i64 = 1_704_067_200_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Template {
    Bank,
    TatpLike,
    TenantGeneric,
    /// Random schema of up to six tables with triggers, procedures, views,
    /// cascades and occasional DDL.
    Mixed,
    /// One row is overwritten early on; the suggested target is undone by it.
    Rewards,
}

impl FromStr for Template {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Ok(match s {
            "bank" => Template::Bank,
            "tatp-like" => Template::TatpLike,
            "tenant-generic" => Template::TenantGeneric,
            "mixed" => Template::Mixed,
            "rewards" => Template::Rewards,
            _ => return Err(format!("unknown template `{}`", s)),
        })
    }
}

impl fmt::Display for Template {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Template::Bank => "bank",
            Template::TatpLike => "tatp-like",
            Template::TenantGeneric => "tenant-generic",
            Template::Mixed => "mixed",
            Template::Rewards => "rewards",
        })
    }
}

/// Relative weights of statement kinds after setup.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Mix {
    pub read: u32,
    pub insert: u32,
    pub update: u32,
    pub delete: u32,
    pub call: u32,
}

impl Default for Mix {
    fn default() -> Self {
        Mix { read: 2, insert: 3, update: 3, delete: 1, call: 3 }
    }
}

impl FromStr for Mix {
    type Err = String;
    /// `read,insert,update,delete,call`, e.g. `2,3,3,1,3`.
    fn from_str(s: &str) -> Result<Self, String> {
        let v: Vec<u32> = s.split(',').map(|x| x.trim().parse::<u32>().map_err(|e| format!("bad mix `{}`: {}", s, e))).collect::<Result<_, _>>()?;
        match v[..] {
            [read, insert, update, delete, call] => Ok(Mix { read, insert, update, delete, call }),
            _ => Err(format!("mix needs five weights, got `{}`", s)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Kind {
    Read,
    Insert,
    Update,
    Delete,
    Call,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkloadSpec {
    pub seed: u64,
    pub template: Template,
    /// Users, subscribers, tenants or customers.
    pub clusters: usize,
    pub queries: usize,
    #[serde(default)]
    pub mix: Mix,
}

/// A retroactive operation the template was built around.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub kind: String,
    pub idx: u64,
    pub sql: Option<String>,
    /// Cluster the target belongs to, when it has one.
    pub cluster: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct Workload {
    pub records: Vec<RawRecord>,
    pub scenario: Scenario,
}

pub const BANK_FIXTURE: [&str; 13] = [
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

struct Gen {
    rng: ChaCha8Rng,
    mix: Mix,
    out: Vec<(String, String)>,
}

impl Gen {
    fn push(&mut self, session: impl Into<String>, stmt: impl Into<String>) {
        self.out.push((session.into(), stmt.into()));
    }

    fn idx(&self) -> u64 {
        self.out.len() as u64
    }

    fn kind(&mut self) -> Kind {
        let m = self.mix;
        let w = [(Kind::Read, m.read), (Kind::Insert, m.insert), (Kind::Update, m.update), (Kind::Delete, m.delete), (Kind::Call, m.call)];
        let total: u32 = w.iter().map(|x| x.1).sum();
        let mut r = self.rng.gen_range(0..total);
        for (k, n) in w {
            if r < n {
                return k;
            }
            r -= n;
        }
        unreachable!()
    }

    fn pick(&mut self, n: usize) -> usize {
        self.rng.gen_range(0..n)
    }
}

pub fn generate(spec: &WorkloadSpec) -> Result<Workload, CliError> {
    if spec.clusters == 0 {
        return Err(CliError::Spec("cluster count must be at least 1".into()));
    }
    let m = spec.mix;
    if m.read + m.insert + m.update + m.delete + m.call == 0 {
        return Err(CliError::Spec("mix weights are all zero".into()));
    }
    let mut g = Gen { rng: ChaCha8Rng::seed_from_u64(spec.seed), mix: m, out: Vec::new() };
    let scenario = match spec.template {
        Template::Bank if spec.clusters == 3 && spec.queries == 13 => {
            for s in BANK_FIXTURE {
                g.push("app", s);
            }
            Scenario { kind: "remove".into(), idx: 10, sql: None, cluster: None }
        }
        Template::Bank => bank(&mut g, spec)?,
        Template::TatpLike => tatp(&mut g, spec)?,
        Template::TenantGeneric => tenant(&mut g, spec)?,
        Template::Mixed => mixed(&mut g, spec)?,
        Template::Rewards => rewards(&mut g, spec)?,
    };
    debug_assert_eq!(g.out.len(), spec.queries);
    let records = g
        .out
        .into_iter()
        .enumerate()
        .map(|(i, (session, text))| RawRecord { line: i + 1, idx: i as u64 + 1, ts: BASE_TS + i as i64 * 1_000_000, session, text, nondet: Vec::new() })
        .collect();
    Ok(Workload { records, scenario })
}

fn check_room(spec: &WorkloadSpec, setup: usize, extra: usize) -> Result<(), CliError> {
    if spec.queries < setup + extra {
        return Err(CliError::Spec(format!(
            "{} with {} clusters needs at least {} queries, got {}",
            spec.template,
            spec.clusters,
            setup + extra,
            spec.queries
        )));
    }
    Ok(())
}

fn bank(g: &mut Gen, spec: &WorkloadSpec) -> Result<Scenario, CliError> {
    let c = spec.clusters;
    check_room(spec, 7 + 3 * c, 1)?;
    for s in &BANK_FIXTURE[..5] {
        g.push("app", *s);
    }
    g.push("app", "CREATE PROCEDURE Transfer(s INT, r INT, amt INT) BEGIN INSERT INTO Transactions VALUES (s, r, amt); UPDATE Accounts SET balance = balance - amt WHERE aid = s; UPDATE Accounts SET balance = balance + amt WHERE aid = r; END");
    g.push("app", "CREATE PROCEDURE Deposit(a INT, amt INT) BEGIN UPDATE Accounts SET balance = balance + amt WHERE aid = a; END");
    for u in 0..c {
        let s = format!("u{}", u);
        g.push(&s, format!("INSERT INTO Users VALUES ('u{}', '{:03}-{:04}')", u, u % 1000, u));
        g.push(&s, format!("INSERT INTO Accounts VALUES ({}, 'u{}', 100)", 2 * u + 1, u));
        g.push(&s, format!("INSERT INTO Accounts VALUES ({}, 'u{}', 0)", 2 * u + 2, u));
    }
    let mut first = None;
    while g.out.len() < spec.queries {
        let u = g.pick(c);
        let (a, b) = if g.rng.gen_bool(0.5) { (2 * u + 1, 2 * u + 2) } else { (2 * u + 2, 2 * u + 1) };
        let amt = g.rng.gen_range(1..=60);
        let stmt = match g.kind() {
            Kind::Read => format!("SELECT balance FROM Accounts WHERE aid = {}", a),
            Kind::Insert => format!("INSERT INTO Statements (aid, total) VALUES ({0}, (SELECT SUM(amount) FROM Transactions WHERE sender = {0}))", a),
            Kind::Update => format!("CALL Deposit({}, {})", a, amt),
            Kind::Delete => format!("DELETE FROM Statements WHERE aid = {}", a),
            Kind::Call => {
                first.get_or_insert((g.idx() + 1, u));
                format!("CALL Transfer({}, {}, {})", a, b, amt)
            }
        };
        g.push(format!("u{}", u), stmt);
    }
    let (idx, u) = first.unwrap_or((g.idx(), 0));
    Ok(Scenario { kind: "remove".into(), idx, sql: None, cluster: Some(u) })
}

fn tatp(g: &mut Gen, spec: &WorkloadSpec) -> Result<Scenario, CliError> {
    let c = spec.clusters;
    check_room(spec, 8 + 3 * c, 1)?;
    g.push("app", "CREATE TABLE Subscriber (s_id INT PRIMARY KEY, sub_nbr TEXT, bit_1 INT, vlr_location INT)");
    g.push("app", "CREATE TABLE AccessInfo (s_id INT REFERENCES Subscriber(s_id) ON DELETE CASCADE, ai_type INT, data1 INT, PRIMARY KEY (s_id, ai_type))");
    g.push("app", "CREATE TABLE SpecialFacility (s_id INT REFERENCES Subscriber(s_id) ON DELETE CASCADE, sf_type INT, is_active INT, data_a INT, PRIMARY KEY (s_id, sf_type))");
    g.push("app", "CREATE TABLE CallForwarding (s_id INT REFERENCES Subscriber(s_id) ON DELETE CASCADE, sf_type INT, start_time INT, end_time INT, numberx TEXT)");
    g.push("app", "CREATE PROCEDURE UpdateLocation(s INT, loc INT) BEGIN UPDATE Subscriber SET vlr_location = loc WHERE s_id = s; END");
    g.push("app", "CREATE PROCEDURE UpdateSubscriberData(s INT, t INT, bit INT, d INT) BEGIN UPDATE Subscriber SET bit_1 = bit WHERE s_id = s; UPDATE SpecialFacility SET data_a = d WHERE s_id = s AND sf_type = t; END");
    g.push("app", "CREATE PROCEDURE InsertCallForwarding(s INT, t INT, st INT, et INT) BEGIN INSERT INTO CallForwarding VALUES (s, t, st, et, 'fwd'); END");
    g.push("app", "CREATE PROCEDURE DeleteCallForwarding(s INT, t INT, st INT) BEGIN DELETE FROM CallForwarding WHERE s_id = s AND sf_type = t AND start_time = st; END");
    for s in 1..=c {
        let sess = format!("s{}", s);
        g.push(&sess, format!("INSERT INTO Subscriber VALUES ({}, '{:015}', 0, 0)", s, s));
        g.push(&sess, format!("INSERT INTO AccessInfo VALUES ({}, 1, 0)", s));
        g.push(&sess, format!("INSERT INTO SpecialFacility VALUES ({}, 1, 1, 0)", s));
    }
    let mut first = None;
    while g.out.len() < spec.queries {
        let s = g.pick(c) + 1;
        let st = 8 * g.pick(3);
        let stmt = match g.kind() {
            Kind::Read => {
                if g.rng.gen_bool(0.5) {
                    format!("SELECT * FROM Subscriber WHERE s_id = {}", s)
                } else {
                    format!("SELECT data1 FROM AccessInfo WHERE s_id = {} AND ai_type = 1", s)
                }
            }
            Kind::Insert => format!("CALL InsertCallForwarding({}, 1, {}, {})", s, st, st + 8),
            Kind::Update => {
                let bit = g.pick(2);
                let d = g.pick(256);
                first.get_or_insert((g.idx() + 1, s));
                format!("CALL UpdateSubscriberData({}, 1, {}, {})", s, bit, d)
            }
            Kind::Delete => format!("CALL DeleteCallForwarding({}, 1, {})", s, st),
            Kind::Call => {
                let loc = g.rng.gen_range(1..100_000);
                format!("CALL UpdateLocation({}, {})", s, loc)
            }
        };
        g.push(format!("s{}", s), stmt);
    }
    let (idx, s) = first.unwrap_or((g.idx(), 1));
    Ok(Scenario { kind: "remove".into(), idx, sql: None, cluster: Some(s) })
}

fn tenant(g: &mut Gen, spec: &WorkloadSpec) -> Result<Scenario, CliError> {
    let c = spec.clusters;
    check_room(spec, 8 + 2 * c, 1)?;
    g.push("app", "CREATE TABLE Tenants (tid INT PRIMARY KEY, name TEXT)");
    g.push("app", "CREATE TABLE Items (iid INT PRIMARY KEY AUTO_INCREMENT, tid INT REFERENCES Tenants(tid) ON DELETE CASCADE, qty INT, CHECK (qty >= 0))");
    g.push("app", "CREATE TABLE Events (eid INT PRIMARY KEY AUTO_INCREMENT, tid INT REFERENCES Tenants(tid) ON DELETE CASCADE, kind TEXT, at TIMESTAMP)");
    g.push("app", "CREATE TRIGGER ItemAudit AFTER UPDATE ON Items FOR EACH ROW BEGIN INSERT INTO Events (tid, kind, at) VALUES (NEW.tid, 'update', NOW()); END");
    g.push("app", "CREATE VIEW Stock AS SELECT tid, qty FROM Items");
    g.push("app", "CREATE PROCEDURE AddItem(t INT, q INT) BEGIN INSERT INTO Items (tid, qty) VALUES (t, q); END");
    g.push("app", "CREATE PROCEDURE Restock(t INT, q INT) BEGIN UPDATE Items SET qty = qty + q WHERE tid = t; END");
    g.push("app", "CREATE PROCEDURE Consume(t INT, q INT) BEGIN UPDATE Items SET qty = qty - q WHERE tid = t; END");
    for t in 1..=c {
        let sess = format!("t{}", t);
        g.push(&sess, format!("INSERT INTO Tenants VALUES ({}, 'tenant{}')", t, t));
        g.push(&sess, format!("CALL AddItem({}, 10)", t));
    }
    // The suggested target is the first post-setup write of tenant 1.
    let target = g.idx() + 1;
    let mut first = true;
    while g.out.len() < spec.queries {
        let t = if first { 1 } else { g.pick(c) + 1 };
        let q = g.rng.gen_range(1..=9);
        let mut k = g.kind();
        if first && k == Kind::Read {
            k = Kind::Call;
        }
        first = false;
        let stmt = match k {
            Kind::Read => format!("SELECT * FROM Stock WHERE tid = {}", t),
            Kind::Insert => format!("CALL AddItem({}, {})", t, q),
            Kind::Update => format!("CALL Consume({}, {})", t, q),
            Kind::Delete => format!("DELETE FROM Events WHERE tid = {}", t),
            Kind::Call => format!("CALL Restock({}, {})", t, q),
        };
        g.push(format!("t{}", t), stmt);
    }
    Ok(Scenario { kind: "remove".into(), idx: target, sql: None, cluster: Some(1) })
}

fn rewards(g: &mut Gen, spec: &WorkloadSpec) -> Result<Scenario, CliError> {
    let c = spec.clusters;
    let overwrite = (spec.queries * 8 / 100).max(4);
    check_room(spec, overwrite, 1)?;
    if c < 2 {
        return Err(CliError::Spec("rewards needs at least 2 clusters".into()));
    }
    const KINDS: [&str; 4] = ["mileage", "movie", "shopping", "dining"];
    g.push("app", "CREATE TABLE Rewards (uid TEXT PRIMARY KEY, kind TEXT)");
    g.push("u0", "INSERT INTO Rewards VALUES ('u0', 'mileage')");
    let mut joined = BTreeSet::new();
    joined.insert(0);
    while g.out.len() < spec.queries {
        if g.out.len() + 1 == overwrite {
            g.push("u0", "BEGIN; DELETE FROM Rewards WHERE uid = 'u0'; INSERT INTO Rewards VALUES ('u0', 'shopping'); COMMIT");
            continue;
        }
        let u = g.pick(c - 1) + 1;
        let kind = *KINDS.choose(&mut g.rng).unwrap();
        let stmt = if joined.insert(u) {
            format!("INSERT INTO Rewards VALUES ('u{}', '{}')", u, kind)
        } else if g.kind() == Kind::Read {
            format!("SELECT kind FROM Rewards WHERE uid = 'u{}'", u)
        } else {
            format!("UPDATE Rewards SET kind = '{}' WHERE uid = 'u{}'", kind, u)
        };
        g.push(format!("u{}", u), stmt);
    }
    Ok(Scenario { kind: "remove".into(), idx: 2, sql: None, cluster: Some(0) })
}

// Tables of the mixed template, in dependency order.
const CUST: usize = 0;
const ORD: usize = 1;
const ITEM: usize = 2;
const AUDIT: usize = 3;
const STOCK: usize = 4;
const LOG: usize = 5;

const MIXED_TABLES: [&str; 6] = [
    "CREATE TABLE Cust (cid INT PRIMARY KEY, name TEXT, credit INT, CHECK (credit >= 0))",
    "CREATE TABLE Ord (oid INT PRIMARY KEY AUTO_INCREMENT, cid INT REFERENCES Cust(cid) ON DELETE CASCADE, amt INT, at TIMESTAMP)",
    "CREATE TABLE Item (iid INT PRIMARY KEY, oid INT REFERENCES Ord(oid) ON DELETE CASCADE, qty INT)",
    "CREATE TABLE Audit (aid INT PRIMARY KEY AUTO_INCREMENT, cid INT, note TEXT)",
    "CREATE TABLE Stock (sku INT PRIMARY KEY, level INT, price DECIMAL(10,2))",
    "CREATE TABLE Log (k INT, v INT)",
];

struct Mixed {
    tables: BTreeSet<usize>,
    triggers: BTreeSet<&'static str>,
    views: BTreeSet<&'static str>,
    procs: BTreeSet<&'static str>,
    log_extra: bool,
    next_item: usize,
}

const TRIGGERS: [(&str, usize, usize, &str); 3] = [
    ("OrdAudit", ORD, AUDIT, "CREATE TRIGGER OrdAudit AFTER INSERT ON Ord FOR EACH ROW BEGIN INSERT INTO Audit (cid, note) VALUES (NEW.cid, 'order'); END"),
    ("CreditGuard", CUST, CUST, "CREATE TRIGGER CreditGuard BEFORE UPDATE ON Cust FOR EACH ROW BEGIN IF NEW.credit > 1000 THEN SIGNAL SQLSTATE '45000'; END IF; END"),
    ("StockLog", STOCK, LOG, "CREATE TRIGGER StockLog AFTER UPDATE ON Stock FOR EACH ROW BEGIN INSERT INTO Log (k, v) VALUES (NEW.sku, NEW.level); END"),
];

fn mixed(g: &mut Gen, spec: &WorkloadSpec) -> Result<Scenario, CliError> {
    let c = spec.clusters as i64;
    let mut st = Mixed { tables: BTreeSet::new(), triggers: BTreeSet::new(), views: BTreeSet::new(), procs: BTreeSet::new(), log_extra: false, next_item: 1 };
    st.tables.insert(CUST);
    for t in [ORD, ITEM, AUDIT, STOCK] {
        let dep_ok = t != ITEM || st.tables.contains(&ORD);
        if dep_ok && g.rng.gen_bool(0.7) {
            st.tables.insert(t);
        }
    }
    // Log may also appear later through DDL.
    let late_log = g.rng.gen_bool(0.4);
    if !late_log && g.rng.gen_bool(0.7) {
        st.tables.insert(LOG);
    }
    let mut setup: Vec<String> = st.tables.iter().map(|&t| MIXED_TABLES[t].to_string()).collect();
    for (name, on, into, sql) in TRIGGERS {
        if st.tables.contains(&on) && st.tables.contains(&into) && g.rng.gen_bool(0.7) {
            st.triggers.insert(name);
            setup.push(sql.into());
        }
    }
    if st.tables.contains(&ORD) {
        st.procs.insert("PlaceOrder");
        setup.push("CREATE PROCEDURE PlaceOrder(c INT, a INT) BEGIN INSERT INTO Ord (cid, amt, at) VALUES (c, a, NOW()); UPDATE Cust SET credit = credit - a WHERE cid = c; END".into());
        st.views.insert("BigOrders");
        setup.push("CREATE VIEW BigOrders AS SELECT oid, cid, amt FROM Ord WHERE amt > 50".into());
    }
    if st.tables.contains(&STOCK) {
        st.procs.insert("Restock");
        setup.push("CREATE PROCEDURE Restock(s INT, n INT) BEGIN DECLARE l INT; SELECT level INTO l FROM Stock WHERE sku = s; IF l < 5 THEN UPDATE Stock SET level = l + n WHERE sku = s; ELSE UPDATE Stock SET level = level - 1 WHERE sku = s; END IF; END".into());
    }
    st.views.insert("RichCust");
    setup.push("CREATE VIEW RichCust AS SELECT cid, credit FROM Cust WHERE credit > 100".into());
    check_room(spec, setup.len(), 1)?;
    for s in setup {
        g.push("app", s);
    }
    while g.out.len() < spec.queries {
        let stmt = mixed_stmt(g, &mut st, c);
        let sess = format!("c{}", g.pick(spec.clusters));
        g.push(sess, stmt);
    }
    let lo = (g.out.len() as u64 / 4).max(1);
    let idx = g.rng.gen_range(lo..=g.out.len() as u64);
    Ok(Scenario { kind: "remove".into(), idx, sql: None, cluster: None })
}

fn mixed_stmt(g: &mut Gen, st: &mut Mixed, c: i64) -> String {
    if g.rng.gen_ratio(1, 40) {
        if let Some(s) = mixed_ddl(g, st) {
            return s;
        }
    }
    if g.rng.gen_ratio(1, 15) {
        let n = g.rng.gen_range(2..=3);
        let parts: Vec<String> = (0..n).map(|_| mixed_dml(g, st, c, Some(Kind::Update))).collect();
        return format!("BEGIN; {}; COMMIT", parts.join("; "));
    }
    mixed_dml(g, st, c, None)
}

fn mixed_ddl(g: &mut Gen, st: &mut Mixed) -> Option<String> {
    match g.pick(5) {
        0 if !st.tables.contains(&LOG) => {
            st.tables.insert(LOG);
            Some(MIXED_TABLES[LOG].into())
        }
        1 if st.tables.contains(&LOG) && !st.log_extra => {
            st.log_extra = true;
            Some("ALTER TABLE Log ADD COLUMN tag INT".into())
        }
        2 if st.tables.contains(&LOG) => Some("TRUNCATE TABLE Log".into()),
        3 => {
            let (name, on, into, sql) = *TRIGGERS.choose(&mut g.rng).unwrap();
            if st.triggers.remove(name) {
                Some(format!("DROP TRIGGER {}", name))
            } else if st.tables.contains(&on) && st.tables.contains(&into) {
                st.triggers.insert(name);
                Some(sql.into())
            } else {
                None
            }
        }
        4 if st.tables.contains(&LOG) && st.tables.contains(&STOCK) && !st.views.contains("LowStock") => {
            st.views.insert("LowStock");
            Some("CREATE VIEW LowStock AS SELECT sku, level FROM Stock WHERE level < 3".into())
        }
        _ => None,
    }
}

fn mixed_dml(g: &mut Gen, st: &mut Mixed, c: i64, force: Option<Kind>) -> String {
    let kind = force.unwrap_or_else(|| g.kind());
    let tables: Vec<usize> = st.tables.iter().copied().collect();
    let t = *tables.choose(&mut g.rng).unwrap();
    let cid = g.rng.gen_range(1..=c);
    let n = g.rng.gen_range(1..=80);
    let key = g.rng.gen_range(1..=(2 * c).max(4));
    match (kind, t) {
        (Kind::Read, _) => {
            let views: Vec<&str> = st.views.iter().copied().collect();
            match g.pick(3) {
                0 => format!("SELECT * FROM {} LIMIT 5", views.choose(&mut g.rng).unwrap()),
                1 => format!("SELECT credit FROM Cust WHERE cid = {}", cid),
                _ => format!("SELECT COUNT(*) FROM Cust WHERE credit > {}", n),
            }
        }
        (Kind::Call, _) if !st.procs.is_empty() => {
            let procs: Vec<&str> = st.procs.iter().copied().collect();
            match *procs.choose(&mut g.rng).unwrap() {
                "PlaceOrder" => format!("CALL PlaceOrder({}, {})", cid, n),
                _ => format!("CALL Restock({}, {})", key % 8 + 1, n % 7),
            }
        }
        (Kind::Insert, CUST) | (Kind::Call, CUST) => {
            format!("INSERT INTO Cust (cid, name, credit) VALUES ({}, 'c{}', {})", cid, cid, 10 * n)
        }
        (Kind::Update, CUST) => match g.pick(4) {
            0 => format!("UPDATE Cust SET credit = credit + {} WHERE cid = {}", n, cid),
            1 => format!("UPDATE Cust SET credit = credit - {} WHERE cid IN ({}, {})", n % 20, cid, (cid % c) + 1),
            2 => format!("UPDATE Cust SET name = 'n{}' WHERE cid BETWEEN {} AND {}", n, cid, cid + 2),
            _ => format!("UPDATE Cust SET credit = credit + 1 WHERE credit < {}", n),
        },
        (Kind::Delete, CUST) => format!("DELETE FROM Cust WHERE cid = {}", cid),
        (Kind::Insert, ORD) | (Kind::Call, ORD) => format!("INSERT INTO Ord (cid, amt, at) VALUES ({}, {}, NOW())", cid, n),
        (Kind::Update, ORD) => format!("UPDATE Ord SET amt = amt * 2 WHERE oid = {}", key),
        (Kind::Delete, ORD) => format!("DELETE FROM Ord WHERE amt < {}", n % 10),
        (Kind::Insert, ITEM) | (Kind::Call, ITEM) => {
            st.next_item += 1;
            let iid = if g.rng.gen_ratio(1, 10) { st.next_item / 2 } else { st.next_item };
            format!("INSERT INTO Item (iid, oid, qty) VALUES ({}, {}, {})", iid, key, n % 5)
        }
        (Kind::Update, ITEM) => format!("UPDATE Item SET qty = qty + 1 WHERE oid = {}", key),
        (Kind::Delete, ITEM) => format!("DELETE FROM Item WHERE qty = {}", n % 5),
        (Kind::Insert, AUDIT) | (Kind::Call, AUDIT) => format!("INSERT INTO Audit (cid, note) VALUES ({}, 'manual')", cid),
        (Kind::Update, AUDIT) => format!("UPDATE Audit SET note = 'seen' WHERE cid = {}", cid),
        (Kind::Delete, AUDIT) => format!("DELETE FROM Audit WHERE aid = {}", key),
        (Kind::Insert, STOCK) | (Kind::Call, STOCK) => {
            format!("INSERT INTO Stock (sku, level, price) VALUES ({}, {}, {}.{:02})", key % 8 + 1, n % 9, n, n % 100)
        }
        (Kind::Update, STOCK) => match g.pick(3) {
            0 => format!("UPDATE Stock SET level = level + 1, price = price * 1.1 WHERE sku = {}", key % 8 + 1),
            1 => format!("UPDATE Stock SET price = RAND() WHERE sku = {}", key % 8 + 1),
            _ => format!("UPDATE Stock SET level = level - {} WHERE level > 3", n % 3),
        },
        (Kind::Delete, STOCK) => format!("DELETE FROM Stock WHERE sku = {}", key % 8 + 1),
        (Kind::Insert, _) | (Kind::Call, _) => {
            if st.log_extra && g.rng.gen_bool(0.5) {
                format!("INSERT INTO Log (k, v, tag) VALUES ({}, {}, {})", cid, n, key)
            } else if g.rng.gen_bool(0.2) {
                "INSERT INTO Log (k, v) SELECT cid, credit FROM RichCust".into()
            } else {
                format!("INSERT INTO Log (k, v) VALUES ({}, {})", cid, n)
            }
        }
        (Kind::Update, _) => format!("UPDATE Log SET v = v + 1 WHERE k = {}", cid),
        (Kind::Delete, _) => format!("DELETE FROM Log WHERE k = {}", cid),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::logfile::{parse_records, render_raw};
    use retro_core::store::ingest;

    fn spec(t: Template, clusters: usize, queries: usize, seed: u64) -> WorkloadSpec {
        WorkloadSpec { seed, template: t, clusters, queries, mix: Mix::default() }
    }

    #[test]
    fn bank_fixture_exact() {
        let w = generate(&spec(Template::Bank, 3, 13, 1)).unwrap();
        let texts: Vec<&str> = w.records.iter().map(|r| r.text.as_str()).collect();
        assert_eq!(texts, BANK_FIXTURE);
        assert_eq!(w.scenario.idx, 10);
    }

    #[test]
    fn same_seed_same_bytes() {
        for t in [Template::Bank, Template::TatpLike, Template::TenantGeneric, Template::Mixed, Template::Rewards] {
            let a = render_raw(&generate(&spec(t, 5, 120, 42)).unwrap().records);
            let b = render_raw(&generate(&spec(t, 5, 120, 42)).unwrap().records);
            assert_eq!(a, b);
            let c = render_raw(&generate(&spec(t, 5, 120, 43)).unwrap().records);
            assert_ne!(a, c, "{}", t);
        }
    }

    #[test]
    fn spec_errors() {
        assert!(matches!(generate(&spec(Template::Bank, 0, 100, 1)), Err(CliError::Spec(_))));
        assert!(matches!(generate(&spec(Template::TenantGeneric, 50, 20, 1)), Err(CliError::Spec(_))));
        let mut s = spec(Template::Mixed, 3, 50, 1);
        s.mix = Mix { read: 0, insert: 0, update: 0, delete: 0, call: 0 };
        assert!(matches!(generate(&s), Err(CliError::Spec(_))));
        assert_eq!("1,2,3,4,5".parse::<Mix>().unwrap(), Mix { read: 1, insert: 2, update: 3, delete: 4, call: 5 });
        assert!("1,2".parse::<Mix>().is_err());
    }

    #[test]
    fn generated_logs_execute() {
        for t in [Template::Bank, Template::TatpLike, Template::TenantGeneric, Template::Rewards] {
            let w = generate(&spec(t, 4, 150, 7)).unwrap();
            let (mut recs, _) = parse_records(&render_raw(&w.records)).unwrap();
            assert_eq!(recs.len(), 150);
            ingest(&mut recs, 64).unwrap();
        }
        for seed in 0..30 {
            let w = generate(&spec(Template::Mixed, 6, 300, seed)).unwrap();
            let (mut recs, _) = parse_records(&render_raw(&w.records)).unwrap_or_else(|e| panic!("seed {}: {}", seed, e));
            let store = ingest(&mut recs, 64).unwrap();
            let aborted = store.effects().iter().filter(|(_, e)| e.aborted.is_some()).count();
            assert!(aborted < recs.len() / 2, "seed {}: {} aborted", seed, aborted);
        }
    }
}
