//! `bdnn` — train, evaluate, benchmark and inspect binarized networks.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "bdnn", version, about = "Binarized neural network engine")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model from a key=value config file.
    Train {
        /// Config file (see README for the key list).
        #[arg(long)]
        config: PathBuf,
        /// Where to write the best-epoch model checkpoint.
        #[arg(long)]
        out_model: PathBuf,
        /// Where to write the per-epoch metrics CSV.
        #[arg(long)]
        out_metrics: PathBuf,
    },
    /// Evaluate a model on a dataset and print the error rate.
    Eval {
        #[arg(long)]
        model: PathBuf,
        /// IDX image file (with --labels).
        #[arg(long)]
        images: Option<PathBuf>,
        /// IDX label file (with --images).
        #[arg(long)]
        labels: Option<PathBuf>,
        /// Comma-separated CIFAR-10 batch files (instead of --images/--labels).
        #[arg(long, value_delimiter = ',')]
        batches: Vec<PathBuf>,
        /// Binarization threshold for grayscale inputs.
        #[arg(long, default_value_t = 128)]
        threshold: u8,
        /// Evaluate on a deterministic random subset of this size.
        #[arg(long)]
        subset: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Compare packed XNOR/popcount inference against the naive
    /// sign-array evaluator on seeded random inputs.
    Bench {
        #[arg(long)]
        model: PathBuf,
        /// Passes over the 64-image block.
        #[arg(long)]
        repeats: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Print per-layer statistics of a model file.
    Inspect {
        #[arg(long)]
        model: PathBuf,
    },
    /// Re-save a model, optionally stripping shadow weights down to 1 bit
    /// per binary weight.
    Export {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        packed_only: bool,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Train { config, out_model, out_metrics } => {
            commands::run_train(config, out_model, out_metrics)
        }
        Command::Eval { model, images, labels, batches, threshold, subset, seed } => {
            commands::run_eval(
                model,
                images.as_deref(),
                labels.as_deref(),
                batches,
                *threshold,
                *subset,
                *seed,
            )
        }
        Command::Bench { model, repeats, seed } => commands::run_bench(model, *repeats, *seed),
        Command::Inspect { model } => commands::run_inspect(model),
        Command::Export { model, out, packed_only } => {
            commands::run_export(model, out, *packed_only)
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            // One machine-parseable line on stderr.
            let msg = e.to_string().replace('\n', " ");
            eprintln!("error={msg}");
            ExitCode::FAILURE
        }
    }
}
