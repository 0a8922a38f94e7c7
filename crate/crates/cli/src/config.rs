//! Experiment configuration: parsing, preset resolution and hashing.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context as _, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use ultrajump_core::kernel::JumpKernel;
use ultrajump_core::presets;
use ultrajump_core::{KernelConfig, SpaceConfig, TreeSpace};

pub const EXPERIMENTS: [&str; 10] = [
    "validate",
    "energies",
    "commutation",
    "intertwine",
    "lumpability",
    "tightness",
    "simulate",
    "fdd",
    "envelope",
    "full-suite",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// One of the shipped presets; `space` and `kernel` override its parts.
    #[serde(default)]
    pub preset: Option<String>,
    #[serde(default)]
    pub space: Option<SpaceConfig>,
    #[serde(default)]
    pub kernel: Option<KernelConfig>,
    /// Informational; the command line names the experiment that runs.
    #[serde(default)]
    pub experiment: Option<String>,
    #[serde(default)]
    pub params: Params,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Params {
    pub seed: u64,
    /// Semigroup times for the commutation residuals.
    pub times: Vec<f64>,
    /// Resolvent parameters.
    pub lambdas: Vec<f64>,
    /// Random functions per level for the averaging isometry.
    pub trials: usize,
    /// Random function pairs for the operator axioms.
    pub pairs: usize,
    /// Random functions per level for the semigroup/form comparison.
    pub consistency_trials: usize,
    /// Random functions for the resolvent approximation study.
    pub resolvent_trials: usize,
    pub tightness_trials: usize,
    /// Level of the random tightness test functions; defaults to `k_min + 1`.
    pub k0: Option<i32>,
    pub fdd_times: Vec<f64>,
    pub n_paths: usize,
    pub envelope_paths: usize,
    pub sim_paths: usize,
    pub horizon: f64,
    /// Leaf density for initial laws; defaults to `ψ(x) = 1 + index(x)`.
    pub psi: Option<Vec<f64>>,
    /// Leaf paths written to `paths.csv`.
    pub export_paths: usize,
}

impl Default for Params {
    fn default() -> Self {
        Params {
            seed: 20240917,
            times: vec![0.1, 0.7, 2.0],
            lambdas: vec![0.5, 1.0, 5.0],
            trials: 100,
            pairs: 1000,
            consistency_trials: 20,
            resolvent_trials: 20,
            tightness_trials: 20,
            k0: None,
            fdd_times: vec![0.2, 0.5, 1.0, 1.5, 2.0],
            n_paths: 100_000,
            envelope_paths: 10_000,
            sim_paths: 10_000,
            horizon: 5.0,
            psi: None,
            export_paths: 100,
        }
    }
}

/// A parsed configuration with its space and kernel built.
pub struct Resolved {
    pub name: String,
    pub space_config: SpaceConfig,
    pub kernel_config: KernelConfig,
    pub params: Params,
    pub space: TreeSpace,
    pub kernel: JumpKernel,
    pub exact: bool,
    pub config_hash: String,
}

impl ExperimentConfig {
    pub fn from_preset(name: &str) -> Result<Self> {
        if presets::preset(name).is_none() {
            bail!("unknown preset '{name}'; available: {}", presets::NAMES.join(", "));
        }
        Ok(ExperimentConfig {
            preset: Some(name.to_string()),
            space: None,
            kernel: None,
            experiment: None,
            params: Params::default(),
        })
    }

    pub fn parse(text: &str) -> Result<Self> {
        serde_json::from_str(text).context("malformed configuration")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("in {}", path.display()))
    }

    /// Space and kernel configs after applying the preset.
    pub fn parts(&self) -> Result<(String, SpaceConfig, KernelConfig)> {
        let base = match &self.preset {
            Some(name) => Some(presets::preset(name).with_context(|| {
                format!("unknown preset '{name}'; available: {}", presets::NAMES.join(", "))
            })?),
            None => None,
        };
        let space = self
            .space
            .clone()
            .or_else(|| base.as_ref().map(|p| p.space.clone()))
            .context("configuration needs a `space` or a `preset`")?;
        let kernel = self
            .kernel
            .clone()
            .or_else(|| base.as_ref().map(|p| p.kernel.clone()))
            .context("configuration needs a `kernel` or a `preset`")?;
        let name = match (&self.preset, self.space.is_some() || self.kernel.is_some()) {
            (Some(p), false) => p.clone(),
            (Some(p), true) => format!("{p} (modified)"),
            (None, _) => "custom".to_string(),
        };
        Ok((name, space, kernel))
    }

    pub fn resolve(&self, base_dir: Option<&Path>, seed: Option<u64>, exact: bool) -> Result<Resolved> {
        let (name, space_config, kernel_config) = self.parts()?;
        let mut params = self.params.clone();
        if let Some(s) = seed {
            params.seed = s;
        }
        let space = TreeSpace::build(&space_config).context("invalid space")?;
        let kernel = kernel_config
            .build_in(&space, base_dir)
            .context("invalid kernel")?;
        check_params(&params, &space)?;
        let config_hash = hash(&name, &space_config, &kernel_config, &params)?;
        Ok(Resolved {
            name,
            space_config,
            kernel_config,
            params,
            space,
            kernel,
            exact,
            config_hash,
        })
    }
}

fn check_params(p: &Params, space: &TreeSpace) -> Result<()> {
    let positive = |name: &str, v: &[f64]| -> Result<()> {
        if v.is_empty() || v.iter().any(|x| !(x.is_finite() && *x > 0.0)) {
            bail!("params.{name} must be a non-empty list of positive numbers");
        }
        Ok(())
    };
    positive("lambdas", &p.lambdas)?;
    positive("fdd_times", &p.fdd_times)?;
    if p.times.is_empty() || p.times.iter().any(|t| !(t.is_finite() && *t >= 0.0)) {
        bail!("params.times must be a non-empty list of non-negative numbers");
    }
    if !(p.horizon.is_finite() && p.horizon > 0.0) {
        bail!("params.horizon must be positive");
    }
    if let Some(k0) = p.k0 {
        if !space.contains_level(k0) {
            bail!(
                "params.k0 = {k0} outside window [{}, {}]",
                space.k_min(),
                space.k_max()
            );
        }
    }
    if let Some(psi) = &p.psi {
        if psi.len() != space.leaf_count() {
            bail!("params.psi has {} entries, the tree has {} leaves", psi.len(), space.leaf_count());
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct Canonical<'a> {
    name: &'a str,
    space: &'a SpaceConfig,
    kernel: &'a KernelConfig,
    params: &'a Params,
}

fn hash(name: &str, space: &SpaceConfig, kernel: &KernelConfig, params: &Params) -> Result<String> {
    // round-trip through Value so object keys come out sorted
    let value = serde_json::to_value(Canonical {
        name,
        space,
        kernel,
        params,
    })?;
    let digest = Sha256::digest(serde_json::to_string(&value)?.as_bytes());
    Ok(hex::encode(digest))
}

/// Directory against which relative paths inside a config resolve.
pub fn base_dir(config_path: &Path) -> Option<PathBuf> {
    config_path.parent().map(Path::to_path_buf)
}
