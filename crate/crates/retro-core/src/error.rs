use alloc::string::String;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SqlError {
    #[error("syntax error at byte {pos}: expected {expected}")]
    Syntax { pos: usize, expected: String },
    #[error("unresolved name `{0}`")]
    UnresolvedName(String),
    #[error("unsupported feature: {0}")]
    UnsupportedFeature(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CatalogError {
    #[error("duplicate name `{0}`")]
    DuplicateName(String),
    #[error("unresolved name `{0}`")]
    UnresolvedName(String),
    #[error("cannot drop missing object `{0}`")]
    DropMissing(String),
    #[error("not a DDL statement")]
    NotDdl,
    #[error("invalid definition: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LogError {
    #[error("line {line}: malformed record: {msg}")]
    MalformedLine { line: usize, msg: String },
    #[error("line {line}: index {idx} does not increase")]
    NonMonotonicIndex { line: usize, idx: u64 },
    #[error("line {line} (idx {idx}): {err}")]
    Sql { line: usize, idx: u64, err: SqlError },
    #[error("line {line} (idx {idx}): {err}")]
    Catalog { line: usize, idx: u64, err: CatalogError },
}

/// Hard execution failures. Constraint violations are not errors: they abort the
/// statement and are reported in the effect.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ExecError {
    #[error("record {idx}: recorded non-deterministic values exhausted")]
    NondetExhausted { idx: u64 },
    #[error("write to `{0}` outside the writable set")]
    AccessViolation(String),
    #[error("table `{0}` not present in this store view")]
    MissingView(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum StoreError {
    #[error("no snapshot of `{table}` at or before {idx}")]
    NoSnapshot { table: String, idx: u64 },
    #[error(transparent)]
    Exec(#[from] ExecError),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum HashError {
    #[error("row does not match schema of `{0}`")]
    SchemaMismatch(String),
    #[error("no ledger coverage for `{table}` at {idx}")]
    LedgerGap { table: String, idx: u64 },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GraphError {
    #[error("window [{lo}, {hi}] out of range")]
    WindowOutOfRange { lo: u64, hi: u64 },
    #[error("target kind does not match record at {0}")]
    TargetKindMismatch(u64),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EngineError {
    #[error(transparent)]
    Sql(#[from] SqlError),
    #[error(transparent)]
    Catalog(#[from] CatalogError),
    #[error(transparent)]
    Exec(#[from] ExecError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Hash(#[from] HashError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("schedule violated: {0}")]
    Schedule(String),
}
