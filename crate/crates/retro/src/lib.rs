//! File formats, parallel scheduling, workload generation and the command-line
//! driver around `retro-core`.

pub mod cli;
pub mod config;
pub mod error;
pub mod gen;
pub mod logfile;
pub mod sched;
pub mod sidecar;
pub mod snapshot;
