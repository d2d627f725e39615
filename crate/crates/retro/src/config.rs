//! Run configuration: an optional JSON file overlaid by command-line flags.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use retro_core::engine::RetroOptions;
use retro_core::exec::AutoIncMode;
use retro_core::rw::ColumnRef;
use serde::Deserialize;

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Artifact directory written by `ingest`.
    pub dir: Option<PathBuf>,
    pub workers: usize,
    pub clustering: bool,
    pub hashjump: bool,
    pub literal_verify: bool,
    pub verify: bool,
    /// AUTO_INCREMENT ids issued by surviving statements are kept on replay.
    pub tombstone: bool,
    pub multi_key: bool,
    /// Commits touching a table between full snapshots of it.
    pub cadence: usize,
    /// `table.column` entries excluded from the final state comparison.
    pub ignore_columns: Vec<String>,
    /// `Table.col=Origin.key` implicit foreign keys.
    pub fk_hints: Vec<String>,
    /// Keep per-phase timings next to the stats.
    pub timings: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            dir: None,
            workers: 1,
            clustering: true,
            hashjump: true,
            literal_verify: false,
            verify: false,
            tombstone: true,
            multi_key: false,
            cadence: retro_core::store::DEFAULT_CADENCE,
            ignore_columns: Vec::new(),
            fk_hints: Vec::new(),
            timings: false,
        }
    }
}

pub fn parse_column(s: &str) -> Result<ColumnRef, CliError> {
    match s.trim().split_once('.') {
        Some((t, c)) if !t.is_empty() && !c.is_empty() && !c.contains('.') => Ok(ColumnRef::new(t, c)),
        _ => Err(CliError::Config(format!("expected table.column, got `{}`", s))),
    }
}

pub fn parse_fk_hint(s: &str) -> Result<(ColumnRef, ColumnRef), CliError> {
    let (a, b) = s.split_once('=').ok_or_else(|| CliError::Config(format!("expected T.c=S.k, got `{}`", s)))?;
    Ok((parse_column(a)?, parse_column(b)?))
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(CliError::io(path))?;
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {}", path.display(), e)))
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.workers == 0 || self.workers > 256 {
            return Err(CliError::Config(format!("workers must be in 1..=256, got {}", self.workers)));
        }
        if self.cadence == 0 {
            return Err(CliError::Config("cadence must be positive".into()));
        }
        self.options().map(|_| ())
    }

    pub fn autoinc(&self) -> AutoIncMode {
        if self.tombstone {
            AutoIncMode::Tombstone
        } else {
            AutoIncMode::Off
        }
    }

    pub fn options(&self) -> Result<RetroOptions, CliError> {
        let ignore_columns: BTreeSet<ColumnRef> = self.ignore_columns.iter().map(|s| parse_column(s)).collect::<Result<_, _>>()?;
        let fk_hints = self.fk_hints.iter().map(|s| parse_fk_hint(s)).collect::<Result<_, _>>()?;
        Ok(RetroOptions {
            clustering: self.clustering,
            hashjump: self.hashjump,
            literal_verify: self.literal_verify,
            autoinc: self.autoinc(),
            ignore_columns,
            fk_hints,
            multi_key: self.multi_key,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_rejected() {
        let ok: RunConfig = serde_json::from_str(r#"{"workers": 4, "fk_hints": ["Statements.aid=Accounts.aid"]}"#).unwrap();
        assert_eq!(ok.workers, 4);
        assert!(ok.clustering);
        let o = ok.options().unwrap();
        assert_eq!(o.fk_hints, vec![(ColumnRef::new("Statements", "aid"), ColumnRef::new("Accounts", "aid"))]);
        assert!(serde_json::from_str::<RunConfig>(r#"{"worker": 4}"#).is_err());
    }

    #[test]
    fn validation() {
        assert!(RunConfig { workers: 0, ..Default::default() }.validate().is_err());
        assert!(RunConfig { ignore_columns: vec!["nodot".into()], ..Default::default() }.validate().is_err());
        assert!(RunConfig { fk_hints: vec!["A.b".into()], ..Default::default() }.validate().is_err());
        assert!(parse_column("a.b.c").is_err());
        assert_eq!(parse_column(" T.c ").unwrap(), ColumnRef::new("T", "c"));
    }
}
