//! IO, LLM transport, dataset building and the command-line front end for
//! command/steps datasets. Pure logic lives in `cost-core`.

pub mod builder;
pub mod cli;
pub mod clock;
pub mod conllu;
pub mod io;
pub mod llm;
pub mod profile;
pub mod seed;

pub use cost_core as core;
