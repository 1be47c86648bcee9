//! `vflip`: spectra, simulation, steering and ergodicity reports from a JSON config.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use thiserror::Error;

use config::{RunConfig, StateSource};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Numerical(_) => 1,
            CliError::Config(_) => 2,
        }
    }
}

#[derive(Parser)]
#[command(name = "vflip", version, about = "Velocity-flip dynamics of linear oscillator systems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// JSON run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory; overrides `out` in the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Run with this single seed instead of the configured list.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Print nothing on success.
    #[arg(long, global = true)]
    quiet: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Frequencies, mode overlaps and admissibility.
    Spectrum,
    /// Time averages, one trajectory and its flip events.
    Simulate,
    /// Flip schedule from the initial state to the target, or to g* when no target is set.
    Steer {
        /// Start state file; overrides `initial`.
        #[arg(long)]
        from: Option<PathBuf>,
        /// Target state file; overrides `target`.
        #[arg(long)]
        to: Option<PathBuf>,
    },
    /// Ergodicity report against microcanonical references.
    Report,
}

fn load(cli: &Cli) -> Result<(RunConfig, PathBuf), CliError> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| CliError::Config("--config is required".into()))?;
    let mut cfg = RunConfig::load(path)?;
    if let Some(seed) = cli.seed {
        cfg.seeds = vec![seed];
    }
    if let Command::Steer { from, to } = &cli.command {
        if let Some(p) = from {
            cfg.initial = Some(StateSource::File(p.clone()));
        }
        if let Some(p) = to {
            cfg.target = Some(StateSource::File(p.clone()));
        }
        cfg.check_files()?;
    }
    let out = cli
        .out
        .clone()
        .or_else(|| cfg.out.clone())
        .unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&out)
        .map_err(|e| CliError::Config(format!("`out`: cannot create {}: {e}", out.display())))?;
    Ok((cfg, out))
}

fn run(cli: &Cli) -> Result<commands::Outcome, CliError> {
    let (cfg, out) = load(cli)?;
    match cli.command {
        Command::Spectrum => commands::spectrum(&cfg, &out),
        Command::Simulate => commands::simulate(&cfg, &out),
        Command::Steer { .. } => commands::steer(&cfg, &out),
        Command::Report => commands::report(&cfg, &out),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(outcome) => {
            if !cli.quiet {
                println!("{}", outcome.summary);
                for f in &outcome.files {
                    println!("wrote {}", f.display());
                }
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("vflip: {e}");
            ExitCode::from(e.code())
        }
    }
}
