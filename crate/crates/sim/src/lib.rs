//! Scenario files, CSV reports and the run orchestration behind the
//! `scenic-sim` binary.

pub mod builtin;
pub mod report;
pub mod ringdump;
pub mod runner;
pub mod scenario;

pub use scenario::{parse_scenario, print_scenario, ParseError, ParseErrors};

use std::path::Path;

use anyhow::{bail, Context};
use scenic_core::harness::Scenario;

/// Loads a scenario from a file, or from the builtin of that name when no
/// such file exists.
pub fn load(arg: &str) -> anyhow::Result<Scenario> {
    let path = Path::new(arg);
    let text = if path.exists() {
        std::fs::read_to_string(path).with_context(|| format!("reading {arg}"))?
    } else if let Some(text) = builtin::get(arg) {
        text.to_string()
    } else {
        bail!("{arg}: no such file or builtin scenario");
    };
    parse_scenario(&text).with_context(|| format!("{arg}: invalid scenario"))
}
