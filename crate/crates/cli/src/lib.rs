//! File formats and subcommands behind the `factm` binary.

pub mod commands;
pub mod error;
pub mod io;
