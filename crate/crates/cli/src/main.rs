//! `sba` — dataset generation, model training, and the saliency bias audit
//! as a reproducible pipeline. Every artifact is byte-deterministic given
//! the JSON config, so re-runs can be diffed directly.

mod pipeline;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(
    name = "sba",
    version,
    about = "Saliency bias audit pipeline: generate data, train PAD models, measure explainer bias"
)]
struct Cli {
    /// Path to the JSON audit config
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Override the configured output directory
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,

    /// Override the configured worker-thread count
    #[arg(long, global = true, value_name = "N")]
    threads: Option<usize>,

    /// Also render SVG curve plots and saliency overlays
    #[arg(long, global = true)]
    svg: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate the train and test datasets
    Gen,
    /// Train the three classifier regimes (full, group A only, group B only)
    Train,
    /// Run the bias audit and write the CSV artifacts
    Audit,
    /// Re-render SVG plots from an existing curves CSV
    Report,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = pipeline::load_config(&cli.config, &cli.out, cli.threads).and_then(|cfg| {
        match cli.command {
            Command::Gen => pipeline::cmd_gen(&cfg),
            Command::Train => pipeline::cmd_train(&cfg),
            Command::Audit => pipeline::cmd_audit(&cfg, cli.svg),
            Command::Report => pipeline::cmd_report(&cfg),
        }
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code())
        }
    }
}
