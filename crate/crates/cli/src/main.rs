//! `rsmfc`: batch front end for simulation, Riccati solves, filtering,
//! cost estimation and maximum-principle checks.
//!
//! Exit codes: 0 success, 1 failed check or numerical error, 2 config error.

mod commands;
mod config;
mod output;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Serialize;

use commands::{Check, Outcome};
use config::{ConfigFile, FilterSource, Overrides};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Numerics(#[from] rsmfc::Error),
    #[error("i/o error: {0}")]
    Io(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            Self::Config(_) | Self::Numerics(rsmfc::Error::InvalidParameter { .. }) => 2,
            _ => 1,
        }
    }
}

#[derive(Parser)]
#[command(name = "rsmfc", version, about = "Risk-sensitive mean-field control: simulation and optimality checks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Scenario/run configuration (TOML); a previous run's manifest.toml works too.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Monte Carlo paths.
    #[arg(long, global = true)]
    paths: Option<usize>,
    /// Particles per filter.
    #[arg(long, global = true)]
    particles: Option<usize>,
    /// Output directory, created if absent.
    #[arg(long, global = true, default_value = "rsmfc-out")]
    out: PathBuf,
    /// Ansatz case of the LQ solution.
    #[arg(long, global = true, value_parser = clap::value_parser!(u8).range(1..=2))]
    case: Option<u8>,
    /// Filter used by `filter`.
    #[arg(long, global = true, value_enum)]
    source: Option<FilterSource>,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Simulate the state system; checks the density martingales.
    Simulate,
    /// Solve the LQ Riccati equation.
    Riccati,
    /// Run the LQ filter along one observation record.
    Filter,
    /// Estimate the risk-sensitive cost of the configured control.
    Cost,
    /// Certify the variational inequality for the LQ feedback.
    CheckSmp,
    /// Tabulate the cost and the small-theta expansion over `run.thetas`.
    SweepTheta,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Self::Simulate => "simulate",
            Self::Riccati => "riccati",
            Self::Filter => "filter",
            Self::Cost => "cost",
            Self::CheckSmp => "check-smp",
            Self::SweepTheta => "sweep-theta",
        }
    }
}

#[derive(Serialize)]
struct Summary<'a> {
    command: &'a str,
    version: &'a str,
    seed: u64,
    passed: bool,
    checks: &'a [Check],
    metrics: &'a std::collections::BTreeMap<String, f64>,
}

fn configure_threads() -> Result<(), CliError> {
    let Ok(raw) = std::env::var("RSMFC_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Config(format!("invalid RSMFC_THREADS `{raw}`: expected a positive integer")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Config(format!("RSMFC_THREADS: {e}")))
}

fn run(cli: &Cli) -> Result<Outcome, CliError> {
    configure_threads()?;
    let file = match &cli.config {
        Some(p) => ConfigFile::load(p)?,
        None => ConfigFile::default(),
    };
    let overrides = Overrides {
        seed: cli.seed,
        paths: cli.paths,
        particles: cli.particles,
        case: cli.case,
        source: cli.source,
    };
    let mut resolved = config::resolve(file, &overrides)?;
    let version = env!("CARGO_PKG_VERSION");
    resolved.file.command = Some(cli.command.name().to_string());
    resolved.file.version = Some(version.to_string());

    let dir: &Path = &cli.out;
    std::fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
    let manifest = toml::to_string(&resolved.file).map_err(|e| CliError::Io(format!("manifest: {e}")))?;
    output::write_text(&dir.join("manifest.toml"), &manifest)?;

    let outcome = match cli.command {
        Command::Simulate => commands::simulate(&resolved, dir),
        Command::Riccati => commands::riccati_cmd(&resolved, dir),
        Command::Filter => commands::filter(&resolved, dir),
        Command::Cost => commands::cost(&resolved, dir),
        Command::CheckSmp => commands::check_smp(&resolved, dir),
        Command::SweepTheta => commands::sweep_theta(&resolved, dir),
    }?;

    let summary = Summary {
        command: cli.command.name(),
        version,
        seed: resolved.seed,
        passed: outcome.passed(),
        checks: &outcome.checks,
        metrics: &outcome.metrics,
    };
    let json = serde_json::to_string_pretty(&summary).map_err(|e| CliError::Io(format!("summary: {e}")))?;
    output::write_text(&dir.join("summary.json"), &(json + "\n"))?;
    Ok(outcome)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(outcome) => {
            for c in &outcome.checks {
                let tag = if c.passed { "ok" } else { "FAILED" };
                println!("{:<24} {tag:<6} {}", c.name, c.detail);
                if !c.passed {
                    eprintln!("check `{}` failed: {}", c.name, c.detail);
                }
            }
            if outcome.passed() {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Err(e) => {
            eprintln!("rsmfc: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
