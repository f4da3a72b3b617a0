//! `mixed-ns` command-line front end.
//!
//! Exit codes: 0 when every check in the written report passed, 1 on a
//! numerical failure or a failed check, 2 on a configuration error.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::RunConfig;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("I/O error on {0}: {1}")]
    Io(PathBuf, #[source] std::io::Error),
}

impl From<mixed_ns::Error> for CliError {
    fn from(e: mixed_ns::Error) -> Self {
        CliError::Numerical(e.to_string())
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            _ => 1,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "mixed-ns", version, about = "Channel Stokes / Navier-Stokes experiments with mixed boundary conditions")]
struct Cli {
    /// TOML run configuration; missing keys take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory (default: runs/<command>).
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Override the random seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Override the number of uniform mesh refinements.
    #[arg(long, global = true)]
    refine: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, Subcommand)]
enum Command {
    /// Build the channel mesh and write JSON/VTK.
    Mesh,
    /// Compute the Stokes eigenbasis and its orthogonality report.
    Eig,
    /// Solve a steady Stokes problem with random forcing.
    Steady,
    /// Exact spectral Stokes evolution and energy inequalities.
    Stokes,
    /// Newton solve of the Navier-Stokes operator equation.
    Ns,
    /// Data-perturbation continuation experiment.
    Perturb,
    /// Corner pencil spectrum, roots and singular-expansion fits.
    Corner,
    /// Print the default configuration.
    Defaults,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Mesh => "mesh",
            Command::Eig => "eig",
            Command::Steady => "steady",
            Command::Stokes => "stokes",
            Command::Ns => "ns",
            Command::Perturb => "perturb",
            Command::Corner => "corner",
            Command::Defaults => "defaults",
        }
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut cfg = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
            RunConfig::from_toml(&text)?
        }
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(k) = cli.refine {
        cfg.geometry.refine = k;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<bool, CliError> {
    if let Command::Defaults = cli.command {
        print!("{}", RunConfig::default().to_toml());
        return Ok(true);
    }
    let cfg = load_config(cli)?;
    let out = cli
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from("runs").join(cli.command.name()));
    mixed_ns::io::write_atomic(&out.join("config.toml"), cfg.to_toml().as_bytes())?;
    match cli.command {
        Command::Mesh => commands::cmd_mesh(&cfg, &out),
        Command::Eig => commands::cmd_eig(&cfg, &out),
        Command::Steady => commands::cmd_steady(&cfg, &out),
        Command::Stokes => commands::cmd_stokes(&cfg, &out),
        Command::Ns => commands::cmd_ns(&cfg, &out),
        Command::Perturb => commands::cmd_perturb(&cfg, &out),
        Command::Corner => commands::cmd_corner(&cfg, &out),
        Command::Defaults => unreachable!("handled above"),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("{}: one or more checks failed; see the report", cli.command.name());
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
