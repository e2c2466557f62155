//! Command-line front end: configuration, run directories and the
//! experiment pipeline built from `pairalign-core`.

pub mod cli;
pub mod commands;
pub mod config;
pub mod report;
pub mod run;
