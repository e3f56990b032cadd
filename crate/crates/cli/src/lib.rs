//! Library surface of the `awn` command-line tool: run configuration,
//! checkpoint serialization, and the command implementations.

pub mod checkpoint;
pub mod commands;
pub mod config;
