//! `linresp`: command-line driver for linear-response computations on the built-in maps.
//!
//! Exit codes: 0 success, 1 other failure, 2 configuration error, 3 blow-up,
//! 4 conditioning failure or degenerate basis, 5 derivative validation failure.

mod commands;
mod output;
mod settings;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use linresp::studies::ScalingAxis;

use settings::Settings;

#[derive(Debug, Parser)]
#[command(name = "linresp", version, about = "Linear response of chaotic maps")]
struct Cli {
    /// Flat TOML file with the same keys as the flags; flags take precedence.
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// One response computation as JSON, or a replica summary as CSV when `--reps` or
    /// `--seeds` asks for several.
    Run {
        #[command(flatten)]
        settings: Settings,
        /// Also write per-segment trace terms and diagnostics to this CSV file.
        #[arg(long)]
        trace_csv: Option<PathBuf>,
    },
    /// Spread of the derivative across replicas against the segment count.
    #[command(name = "scaling-a")]
    ScalingA {
        #[command(flatten)]
        settings: Settings,
    },
    /// Spread of the derivative across replicas against the window half-width.
    #[command(name = "scaling-w")]
    ScalingW {
        #[command(flatten)]
        settings: Settings,
    },
    /// Response and long-run average at each parameter value.
    #[command(name = "gamma-sweep")]
    GammaSweep {
        #[command(flatten)]
        settings: Settings,
    },
    /// Finite-difference check of the map's derivative callbacks.
    Validate {
        #[command(flatten)]
        settings: Settings,
    },
    /// Finite-difference regression of long-run averages.
    Oracle {
        #[command(flatten)]
        settings: Settings,
        /// Add the tangent line of a response computation at `gamma`.
        #[arg(long)]
        flr: bool,
    },
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] linresp::Error),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("derivative validation failed")]
    ValidationFailed,
    #[error("every computation failed")]
    AllFailed,
}

impl CliError {
    fn exit_code(&self) -> u8 {
        use linresp::Error as E;
        match self {
            CliError::Config(_) | CliError::Core(E::Config(_)) => 2,
            CliError::Core(E::BlowUp { .. }) => 3,
            CliError::Core(E::Conditioning { .. } | E::DegenerateBasis { .. }) => 4,
            CliError::ValidationFailed | CliError::Core(E::Validation(_)) => 5,
            _ => 1,
        }
    }
}

fn configure_threads() -> Result<(), CliError> {
    let Ok(value) = std::env::var("LINRESP_THREADS") else {
        return Ok(());
    };
    let threads: usize = value.trim().parse().map_err(|_| {
        CliError::Config(format!(
            "LINRESP_THREADS must be a positive integer, got '{value}'"
        ))
    })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| CliError::Config(format!("cannot configure worker threads: {e}")))
}

fn merged(file: Option<&PathBuf>, flags: Settings) -> Result<Settings, CliError> {
    let base = match file {
        Some(path) => Settings::from_file(path)?,
        None => Settings::default(),
    };
    Ok(base.overlay(flags))
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    configure_threads()?;
    let file = cli.config.as_ref();
    match cli.command {
        Command::Run {
            settings,
            trace_csv,
        } => commands::run(&merged(file, settings)?, trace_csv.as_deref()),
        Command::ScalingA { settings } => {
            commands::scaling(&merged(file, settings)?, ScalingAxis::Segments)
        }
        Command::ScalingW { settings } => {
            commands::scaling(&merged(file, settings)?, ScalingAxis::Window)
        }
        Command::GammaSweep { settings } => commands::sweep(&merged(file, settings)?),
        Command::Validate { settings } => commands::validate(&merged(file, settings)?),
        Command::Oracle { settings, flr } => commands::oracle(&merged(file, settings)?, flr),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
