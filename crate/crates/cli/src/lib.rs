//! Library surface of the `gdr` binary: argument types, subcommand
//! implementations, and the report schemas (exposed so tests can
//! round-trip them).

pub mod args;
pub mod commands;
pub mod input;
pub mod report;
pub mod svg;
