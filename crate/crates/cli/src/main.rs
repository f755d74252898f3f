//! `lecodu`: runs the collaborative-classification pipeline from a TOML
//! config. Exit codes: 0 ok, 2 config error, 3 missing upstream artifact,
//! 4 runtime failure.

use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};

mod commands;
mod config;

use commands::MissingArtifact;
use config::{ConfigError, ExperimentConfig};

#[derive(Debug, Parser)]
#[command(name = "lecodu", version, about = "Learning to complement or defer to multiple users")]
struct Cli {
    /// Experiment config (TOML).
    #[arg(long, global = true, default_value = "lecodu.toml")]
    config: PathBuf,
    /// Overrides the master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for sweeps (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate the train and test multi-rater datasets.
    Gen,
    /// Train the base classifier.
    TrainBase,
    /// Build consensus labels for the training set.
    Consensus,
    /// Train one collaboration bundle per λ.
    Train,
    /// Evaluate every bundle and the selective-prediction baseline.
    Eval,
    /// Train and evaluate the λ grid in one go.
    Sweep,
    /// Run the configured ablations over the λ grid.
    Ablate,
    /// Sweep the λ grid for each user pool size.
    ScaleUsers,
    /// Host live sessions over the trained bundles.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
    },
}

fn run(cli: Cli) -> Result<()> {
    let config = ExperimentConfig::load(&cli.config, cli.seed, cli.out)?;
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            return Err(ConfigError("--jobs must be positive".into()).into());
        }
        rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global()?;
    }
    match cli.command {
        Command::Gen => commands::gen(&config),
        Command::TrainBase => commands::train_base(&config),
        Command::Consensus => commands::consensus(&config),
        Command::Train => commands::train(&config),
        Command::Eval => commands::eval(&config),
        Command::Sweep => commands::sweep(&config),
        Command::Ablate => commands::ablate(&config),
        Command::ScaleUsers => commands::scale_users(&config),
        Command::Serve { addr } => commands::serve(&config, addr),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<ConfigError>().is_some() {
                ExitCode::from(2)
            } else if e.downcast_ref::<MissingArtifact>().is_some() {
                ExitCode::from(3)
            } else {
                ExitCode::from(4)
            }
        }
    }
}
