//! Static description of a configuration. Builds the space only.

use std::fmt::Write as _;

use anyhow::{Context as _, Result};
use ultrajump_core::kernel::{GammaSpec, LambdaSpec, LambdaValues};
use ultrajump_core::{KernelConfig, SpaceConfig, TreeSpace};

use crate::config::ExperimentConfig;

fn lambda_text(l: &LambdaSpec) -> String {
    match l {
        LambdaSpec::Geometric { alpha } => format!("geometric λ(m) = q^(α m), α = {alpha}"),
        LambdaSpec::Table {
            values: LambdaValues::Levels(v),
        } => format!("per-level table {v:?}"),
        LambdaSpec::Table {
            values: LambdaValues::Nodes(m),
        } => format!("per-node table with {} entries", m.len()),
    }
}

fn gamma_text(g: &GammaSpec, n_leaves: usize, components: usize) -> String {
    let levels = if g.by_level.is_empty() {
        "none".to_string()
    } else {
        g.by_level
            .iter()
            .map(|(k, c)| format!("r={k} -> {c}"))
            .collect::<Vec<_>>()
            .join(", ")
    };
    format!(
        "Γ: {n_leaves}×{n_leaves} leaf-pair table over {components} components; default {}, by separation level: {levels}; {} ball-pair overrides",
        g.default,
        g.pairs.len()
    )
}

fn kernel_text(k: &KernelConfig, n_leaves: usize, out: &mut String) {
    match k {
        KernelConfig::Kigami { lambda } => {
            let _ = writeln!(out, "kernel: kigami, {}", lambda_text(lambda));
        }
        KernelConfig::Mixed { components, gamma } => {
            let _ = writeln!(out, "kernel: mixed, {} components", components.len());
            for (i, c) in components.iter().enumerate() {
                let _ = writeln!(out, "  component {}: {}", i + 1, lambda_text(c));
            }
            let _ = writeln!(out, "  {}", gamma_text(gamma, n_leaves, components.len()));
        }
        KernelConfig::Perturbed {
            base,
            epsilon,
            signs,
        } => {
            let _ = writeln!(out, "kernel: perturbed, ε = {epsilon}, signs {signs}");
            let _ = write!(out, "  base ");
            kernel_text(base, n_leaves, out);
        }
        KernelConfig::Table { matrix_csv, matrix } => match (matrix_csv, matrix) {
            (Some(p), _) => {
                let _ = writeln!(out, "kernel: table from {}", p.display());
            }
            _ => {
                let _ = writeln!(out, "kernel: inline {n_leaves}×{n_leaves} table");
            }
        },
    }
}

pub fn describe(cfg: &ExperimentConfig) -> Result<String> {
    let (name, space_config, kernel_config) = cfg.parts()?;
    let space = TreeSpace::build(&space_config).context("invalid space")?;
    let (a, b) = (space.k_min(), space.k_max());
    let mut out = String::new();
    let _ = writeln!(out, "configuration: {name}");
    match &space_config {
        SpaceConfig::Padic { p, .. } => {
            let _ = writeln!(out, "space: p-adic, p = {p}, Haar measure");
        }
        SpaceConfig::Tree { q, weights, .. } => {
            let _ = writeln!(
                out,
                "space: tree, q = {q}, {} weighted nodes",
                weights.len()
            );
        }
    }
    let counts: Vec<String> = space.window().map(|k| space.ball_count(k).to_string()).collect();
    let _ = writeln!(out, "levels {a}..{b}, states per level: {}", counts.join(","));
    let _ = writeln!(out, "total mass: {}", space.total_mass());
    let _ = writeln!(
        out,
        "metric: ρ(x,y) = q^(-r), distances bounded by q^{{{}}}, largest attained q^{{{}}}",
        -a,
        -(a + 1)
    );
    kernel_text(&kernel_config, space.leaf_count(), &mut out);
    let _ = writeln!(
        out,
        "certificates: (A.1) and (A.3) for k1 in {a}..{b}, (A.4) over pairs with ρ >= 1, (BC)_k for k in {a}..{b}"
    );
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn describes_presets() {
        let d = describe(&ExperimentConfig::from_preset("q3-mixed").unwrap()).unwrap();
        assert!(d.contains("levels 0..2, states per level: 1,3,9"));
        assert!(d.contains("component 2"));
        let d = describe(&ExperimentConfig::from_preset("q2-wide").unwrap()).unwrap();
        assert!(d.contains("q^{1}"));
        assert!(d.contains("states per level: 1,2,4,8,16"));
    }
}
