use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context as _, Result};
use clap::Parser;
use ultrajump_cli::config::base_dir;
use ultrajump_cli::describe::describe;
use ultrajump_cli::{run, ExperimentConfig, EXPERIMENTS};

/// Verification experiments for jump processes on ultrametric trees.
#[derive(Parser, Debug)]
#[command(name = "ultrajump", version)]
struct Cli {
    /// One of the experiments, `full-suite`, or `describe`.
    experiment: String,
    /// JSON configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Shipped preset, used when no configuration file is given.
    #[arg(long)]
    preset: Option<String>,
    /// Output directory for summary.json and detail files.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Repeats the algebraic identities in rational arithmetic.
    #[arg(long)]
    exact: bool,
}

enum Outcome {
    Pass,
    Fail,
}

fn threads() -> Result<()> {
    let Ok(v) = std::env::var("ULTRAJUMP_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .with_context(|| format!("ULTRAJUMP_THREADS must be a positive integer, got '{v}'"))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .context("cannot configure thread pool")
}

fn load(cli: &Cli) -> Result<ExperimentConfig> {
    match (&cli.config, &cli.preset) {
        (Some(_), Some(_)) => bail!("give either --config or --preset, not both"),
        (Some(path), None) => ExperimentConfig::load(path),
        (None, Some(name)) => ExperimentConfig::from_preset(name),
        (None, None) => bail!("a configuration is required: --config file.json or --preset name"),
    }
}

fn execute(cli: Cli) -> Result<Outcome> {
    threads()?;
    let cfg = load(&cli)?;
    if cli.experiment == "describe" {
        print!("{}", describe(&cfg)?);
        return Ok(Outcome::Pass);
    }
    if !EXPERIMENTS.contains(&cli.experiment.as_str()) {
        bail!(
            "unknown experiment '{}'; expected describe or one of {}",
            cli.experiment,
            EXPERIMENTS.join(", ")
        );
    }
    let out = cli.out.as_ref().context("--out is required")?;
    let base = cli.config.as_deref().and_then(base_dir);
    let resolved = cfg.resolve(base.as_deref(), cli.seed, cli.exact)?;
    let summary = run(&cli.experiment, &resolved)?;
    summary.write(out)?;
    for s in &summary.sections {
        println!(
            "{:<12} {}  ({} checks)",
            s.experiment,
            if s.passed { "PASS" } else { "FAIL" },
            s.checks.len()
        );
        for c in s.failed_checks() {
            eprintln!(
                "  failed: {} value={:?} threshold={:?} {}",
                c.name, c.value, c.threshold, c.detail
            );
        }
    }
    println!("summary: {}", out.join("summary.json").display());
    Ok(if summary.passed { Outcome::Pass } else { Outcome::Fail })
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(cli) {
        Ok(Outcome::Pass) => ExitCode::SUCCESS,
        Ok(Outcome::Fail) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
