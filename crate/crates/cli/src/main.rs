//! `gdr` — one gradient-based embedding engine that produces tSNE-style
//! or UMAP-style layouts depending on a single normalization switch,
//! with every other hyperparameter difference exposed as its own flag.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use gdr_core::GdrError;

use gdr_cli::args::{ConfigArgs, InputArgs};
use gdr_cli::commands;

#[derive(Parser)]
#[command(
    name = "gdr",
    about = "Gradient dimensionality reduction: tSNE- and UMAP-style embeddings from one engine",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Embed a dataset and write embedding.csv, report.json, plot.svg
    Embed {
        #[command(flatten)]
        config: ConfigArgs,
        #[command(flatten)]
        input: InputArgs,
        /// Output directory
        #[arg(long, default_value = "gdr_out")]
        out_dir: PathBuf,
    },
    /// Run every preset with each single-toggle variant and tabulate
    /// the metrics
    Sweep {
        #[command(flatten)]
        config: ConfigArgs,
        #[command(flatten)]
        input: InputArgs,
        #[arg(long, default_value = "gdr_out")]
        out_dir: PathBuf,
        /// Run sweep cells concurrently
        #[arg(long)]
        parallel_cells: bool,
    },
    /// Numerically check the force-ratio statements and the repulsion
    /// angle diagnostic
    Theorems {
        /// Point counts for the force-ratio experiment
        #[arg(long, value_delimiter = ',', default_values_t = vec![100usize, 1000, 5000])]
        sizes: Vec<usize>,
        /// Monte-Carlo draws per expectation
        #[arg(long, default_value_t = 100_000)]
        draws: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "gdr_out")]
        out_dir: PathBuf,
    },
    /// Time the epoch loop across sizes and presets
    Bench {
        /// Dataset sizes
        #[arg(long, value_delimiter = ',', default_values_t = vec![1000usize, 10_000, 50_000])]
        sizes: Vec<usize>,
        /// Epochs to time
        #[arg(long, default_value_t = 100)]
        epochs: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0)]
        threads: usize,
        #[arg(long, default_value = "gdr_out")]
        out_dir: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Embed {
            config,
            input,
            out_dir,
        } => commands::embed(config, input, out_dir),
        Command::Sweep {
            config,
            input,
            out_dir,
            parallel_cells,
        } => commands::sweep(config, input, out_dir, *parallel_cells),
        Command::Theorems {
            sizes,
            draws,
            seed,
            out_dir,
        } => commands::theorems(sizes, *draws, *seed, out_dir),
        Command::Bench {
            sizes,
            epochs,
            seed,
            threads,
            out_dir,
        } => commands::bench(sizes, *epochs, *seed, *threads, out_dir),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            match err {
                GdrError::Config(_) | GdrError::InvalidArgument(_) => ExitCode::from(2),
                GdrError::NumericAbort { .. } => ExitCode::from(3),
                _ => ExitCode::from(1),
            }
        }
    }
}
