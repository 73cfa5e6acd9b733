//! Experiment runner behind the `cablegff` binary.
//!
//! A run resolves a JSON configuration (plus command-line overrides) into a
//! [`config::Resolved`], evaluates one suite and writes its
//! [`output::Outcome`] to the output directory.

pub mod config;
pub mod error;
pub mod output;
pub mod runner;
pub mod suites;

use config::{Command, Resolved};
use output::Outcome;

/// Runs the suite of `cfg.command`.
pub fn run(cfg: &Resolved) -> error::Result<Outcome> {
    match cfg.command {
        Command::Potential => suites::potential::run(cfg),
        Command::CapLaw => suites::cap_law::run(cfg),
        Command::Isom => suites::isom::run(cfg),
        Command::Approx => suites::approx::run(cfg),
    }
}
