//! Orchestration behind the `formgreen` command line: configuration,
//! property suites, solver runs and report files.

pub mod cli;
pub mod commands;
pub mod config;
pub mod verify;
