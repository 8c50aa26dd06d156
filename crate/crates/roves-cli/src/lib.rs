//! Pipeline wiring for the `roves` binary: JSON configuration, deterministic
//! synthetic fixtures, and the subcommand implementations.

pub mod commands;
pub mod config;
pub mod fixtures;
