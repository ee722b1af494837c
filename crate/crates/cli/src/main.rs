mod commands;
mod config;
mod error;
mod image;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

/// Volumetric CNN experiments with patch individual filter layers.
#[derive(Debug, Parser)]
#[command(name = "pifnet", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic labeled dataset.
    Synth(commands::SynthArgs),
    /// Train the baseline and PIF models of a config for repeated seeds.
    Train(commands::TrainArgs),
    /// Score a checkpoint on one split of a dataset.
    Eval(commands::EvalArgs),
    /// Relevance heatmap of one volume.
    Heatmap(commands::HeatmapArgs),
    /// Parameter counts of the models of a config.
    Params {
        /// Experiment config; defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth(a) => commands::synth(&a),
        Command::Train(a) => commands::train(&a),
        Command::Eval(a) => commands::eval(&a),
        Command::Heatmap(a) => commands::heatmap(&a),
        Command::Params { config } => commands::params(config.as_deref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
