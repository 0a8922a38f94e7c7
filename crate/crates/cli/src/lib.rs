//! Command-line front end: configuration, experiments and reports.

pub mod config;
pub mod describe;
pub mod experiments;
pub mod report;

use anyhow::Result;

pub use config::{ExperimentConfig, Resolved, EXPERIMENTS};
pub use report::{Check, Section, Summary};

/// Runs one experiment (or the full suite) and assembles its summary.
pub fn run(experiment: &str, r: &Resolved) -> Result<Summary> {
    let ctx = experiments::Ctx::new(r)?;
    let sections = experiments::run(experiment, &ctx)?;
    Ok(Summary {
        tool: report::TOOL,
        version: report::VERSION,
        experiment: experiment.to_string(),
        config: r.name.clone(),
        config_hash: r.config_hash.clone(),
        seed: r.params.seed,
        exact: r.exact,
        passed: sections.iter().all(|s| s.passed),
        sections,
    })
}
