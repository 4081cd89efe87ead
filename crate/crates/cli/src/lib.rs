//! Configuration parsing and subcommands for the `surfns` binary.

pub mod commands;
pub mod config;
