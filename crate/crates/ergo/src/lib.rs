//! Std companion to `ergo-core`: corpus and embedding files, configs,
//! checkpoints, the experiment commands and the `ergo` command line.

pub mod artifacts;
pub mod checkpoint;
pub mod cli;
pub mod commands;
pub mod config;
pub mod corpus_io;
pub mod error;
pub mod interchange;

pub use error::{Error, ErrorKind};
