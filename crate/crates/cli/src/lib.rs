//! Command-line front end: experiment specs, run sweeps, constants reports and
//! the acceptance suite.

pub mod commands;
pub mod spec;
