//! `stssad`: synthesize testbeds, tune augmentations, evaluate and check
//! gradients.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 runtime failure.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use stssad::tuner::Mode;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Runtime(String),
}

impl From<stssad::Error> for CliError {
    fn from(e: stssad::Error) -> Self {
        match e {
            stssad::Error::Invalid(m) => CliError::Usage(m),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

#[derive(Parser, Debug)]
#[command(name = "stssad", version, about = "Self-tuning augmentation for self-supervised anomaly detection")]
struct Cli {
    /// Root seed; overrides the seeds of a spec or config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: number of processors).
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic dataset from a JSON spec (defaults if omitted).
    Synth { spec: Option<PathBuf> },
    /// Tune augmentation hyperparameters for every method and seed of a config.
    Tune {
        config: PathBuf,
        /// Print the resolved runs and an iteration estimate, then stop.
        #[arg(long)]
        dry_run: bool,
        /// Force a tuning mode for every method: so, fo, rs or rd.
        #[arg(long, value_parser = config::parse_mode)]
        mode: Option<Mode>,
    },
    /// Score completed runs and write comparison reports.
    Eval {
        runs: PathBuf,
        /// Method the others are compared against.
        #[arg(long, default_value = "st_ssad")]
        reference: String,
    },
    /// Run the finite-difference and invariant suites.
    Gradcheck {
        /// Suites to run (tensor, augment, valloss, tuner); all by default.
        #[arg(long)]
        suite: Vec<String>,
        #[arg(long, hide = true)]
        inject_fault: Option<String>,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = cli.workers {
        if n == 0 {
            return Err(CliError::Usage("--workers must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Runtime(e.to_string()))?;
    }
    match cli.command {
        Command::Synth { spec } => commands::synth(spec.as_deref(), cli.seed, cli.out.as_deref()),
        Command::Tune { config, dry_run, mode } => {
            commands::tune(&config, cli.seed, cli.out.as_deref(), dry_run, mode)
        }
        Command::Eval { runs, reference } => commands::eval(&runs, cli.out.as_deref(), &reference),
        Command::Gradcheck { suite, inject_fault } => {
            commands::gradcheck(&suite, cli.seed.unwrap_or(0), inject_fault.as_deref())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                CliError::Usage(_) => 1,
                CliError::Runtime(_) => 2,
            })
        }
    }
}
