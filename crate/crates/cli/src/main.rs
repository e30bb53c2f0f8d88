mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use crate::commands::Context;
use crate::config::{RawConfig, RunConfig};
use crate::error::CliError;

/// Few-atom trap loss simulation, event detection and collision-rate fitting.
#[derive(Parser, Debug)]
#[command(name = "coldcount", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Config file of `section.key = value` lines, applied after the preset.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Built-in operating point applied before the config file.
    #[arg(long, global = true)]
    preset: Option<Preset>,

    /// Top-level seed; overrides `sim.seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Directory receiving all output files.
    #[arg(long, global = true, default_value = ".")]
    out_dir: PathBuf,

    /// Extra `key=value` override, applied last. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Command {
    /// Simulate the atom-number chain and write events.csv.
    Simulate,
    /// Turn events.csv into a photon-count trace.csv.
    Synth,
    /// Detect steps in trace.csv and write detected.csv.
    Detect,
    /// Tabulate per-N rates from detected.csv and fit the chain parameters.
    Fit,
    /// Suppression curves P_HCC(s0) with fitted and formula decay constants.
    Shield,
    /// Simulate, synthesize, detect, fit and report injected against recovered values.
    Pipeline,
    /// Stationary distribution and per-N event rates from the master equation.
    Oracle,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
enum Preset {
    Fig2,
    Fig4a,
    Fig4b,
    Fig4c,
}

impl Preset {
    fn name(self) -> &'static str {
        match self {
            Preset::Fig2 => "fig2",
            Preset::Fig4a => "fig4a",
            Preset::Fig4b => "fig4b",
            Preset::Fig4c => "fig4c",
        }
    }
}

fn load(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut raw = RawConfig::default();
    if let Some(p) = cli.preset {
        let text = config::preset(p.name()).expect("every preset is embedded");
        raw.merge_text(text, p.name())?;
    }
    if let Some(path) = &cli.config {
        let text = std::fs::read_to_string(path).map_err(|source| CliError::Io {
            path: path.clone(),
            source,
        })?;
        raw.merge_text(&text, &path.display().to_string())?;
    }
    for kv in &cli.overrides {
        raw.set(kv)?;
    }
    if let Some(seed) = cli.seed {
        raw.set(&format!("sim.seed = {seed}"))?;
    }
    RunConfig::from_raw(raw)
}

fn run(cli: &Cli) -> Result<(), CliError> {
    let config = load(cli)?;
    std::fs::create_dir_all(&cli.out_dir).map_err(|source| CliError::Io {
        path: cli.out_dir.clone(),
        source,
    })?;
    let ctx = Context {
        config,
        out_dir: cli.out_dir.clone(),
    };
    match cli.command {
        Command::Simulate => commands::simulate_cmd(&ctx),
        Command::Synth => commands::synth_cmd(&ctx),
        Command::Detect => commands::detect_cmd(&ctx),
        Command::Fit => commands::fit_cmd(&ctx),
        Command::Shield => commands::shield_cmd(&ctx),
        Command::Pipeline => commands::pipeline_cmd(&ctx),
        Command::Oracle => commands::oracle_cmd(&ctx),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
