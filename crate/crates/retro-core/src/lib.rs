#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod catalog;
pub mod cluster;
pub mod engine;
pub mod error;
pub mod exec;
pub mod graph;
pub mod hash;
pub mod record;
pub mod rw;
pub mod sql;
pub mod store;
pub mod table;
pub mod value;
