//! File formats, run configuration and command-line front end for
//! `grade-core`.

pub mod bench;
pub mod checkpoint;
pub mod cli;
pub mod commands;
pub mod config;
pub mod io;
