//! Core types and pure logic for command/steps datasets: record model,
//! prompt templates, output parsing, plan validation, corpus metrics and a
//! symbolic tabletop simulator. No IO.
#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod complexity;
pub mod model;
pub mod parse;
pub mod prompt;
pub mod sim;
pub mod validate;

pub use model::{ActionStep, BuildConfig, DatasetRecord, Domain, ObjectName, Provenance, Timestamp};
