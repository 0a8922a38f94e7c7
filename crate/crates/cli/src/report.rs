//! Report structures and file output.

use std::path::Path;

use anyhow::{Context as _, Result};
use serde::Serialize;
use serde_json::Value;

pub const TOOL: &str = "ultrajump";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Clone, Debug, Serialize)]
pub struct Check {
    pub name: String,
    /// Acceptance criterion this check belongs to, when it belongs to one.
    pub criterion: Option<u8>,
    pub passed: bool,
    pub value: Option<f64>,
    pub threshold: Option<f64>,
    pub detail: String,
}

impl Check {
    /// Passes when `value <= threshold`.
    pub fn at_most(name: impl Into<String>, criterion: Option<u8>, value: f64, threshold: f64) -> Self {
        Check {
            name: name.into(),
            criterion,
            passed: value <= threshold,
            value: Some(value),
            threshold: Some(threshold),
            detail: String::new(),
        }
    }

    /// Passes when `value > threshold`.
    pub fn above(name: impl Into<String>, criterion: Option<u8>, value: f64, threshold: f64) -> Self {
        Check {
            name: name.into(),
            criterion,
            passed: value > threshold,
            value: Some(value),
            threshold: Some(threshold),
            detail: String::new(),
        }
    }

    pub fn flag(name: impl Into<String>, criterion: Option<u8>, passed: bool, detail: impl Into<String>) -> Self {
        Check {
            name: name.into(),
            criterion,
            passed,
            value: None,
            threshold: None,
            detail: detail.into(),
        }
    }

    pub fn with_detail(mut self, detail: impl Into<String>) -> Self {
        self.detail = detail.into();
        self
    }
}

/// Output of one experiment.
#[derive(Clone, Debug, Serialize)]
pub struct Section {
    pub experiment: String,
    pub criteria: Vec<u8>,
    pub passed: bool,
    pub checks: Vec<Check>,
    pub results: Value,
    #[serde(skip)]
    pub files: Vec<(String, String)>,
}

impl Section {
    pub fn new(experiment: &str, criteria: &[u8], checks: Vec<Check>, results: Value) -> Self {
        Section {
            experiment: experiment.to_string(),
            criteria: criteria.to_vec(),
            passed: checks.iter().all(|c| c.passed),
            checks,
            results,
            files: Vec::new(),
        }
    }

    pub fn with_files(mut self, files: Vec<(String, String)>) -> Self {
        self.files = files;
        self
    }

    pub fn failed_checks(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.passed)
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Summary {
    pub tool: &'static str,
    pub version: &'static str,
    pub experiment: String,
    pub config: String,
    pub config_hash: String,
    pub seed: u64,
    pub exact: bool,
    pub passed: bool,
    pub sections: Vec<Section>,
}

impl Summary {
    pub fn section(&self, name: &str) -> Option<&Section> {
        self.sections.iter().find(|s| s.experiment == name)
    }

    pub fn checks(&self) -> impl Iterator<Item = &Check> {
        self.sections.iter().flat_map(|s| s.checks.iter())
    }

    /// Writes `summary.json` and every detail file into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
        let mut json = serde_json::to_string_pretty(self)?;
        json.push('\n');
        std::fs::write(dir.join("summary.json"), json)?;
        for section in &self.sections {
            for (name, body) in &section.files {
                let path = dir.join(name);
                std::fs::write(&path, body).with_context(|| format!("cannot write {}", path.display()))?;
            }
        }
        Ok(())
    }
}
