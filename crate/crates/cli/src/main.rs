//! `tenet`: generate synthetic data, train, predict and evaluate strided
//! MPS segmenters.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use tenet_core::Error;

#[derive(Parser)]
#[command(name = "tenet", version, about = "Tensor-network image segmentation")]
struct Cli {
    /// Worker threads (default: all cores). Use 1 with `deterministic` for
    /// bit-reproducible training.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic blob dataset (images/ and masks/).
    GenSynth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        size: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long, default_value_t = 2)]
        dims: usize,
    },
    /// Train a model from a JSON config and save the best checkpoint.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Dataset root; overrides `data_root` in the config.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Per-epoch loss and Dice as CSV.
        #[arg(long)]
        history: Option<PathBuf>,
        #[arg(long)]
        dims: Option<usize>,
        /// Overrides `max_epochs`.
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        batch_size: Option<usize>,
    },
    /// Segment one image.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        input: PathBuf,
        /// Binary mask: {0,255} PGM for images, 0/1 STV for volumes.
        #[arg(long)]
        output: PathBuf,
        /// Per-pixel probabilities: 16-bit PGM for images, STV for volumes.
        #[arg(long)]
        soft: Option<PathBuf>,
    },
    /// Score a model on a dataset and write a per-image Dice report.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        report: PathBuf,
    },
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Config(_) | Error::Dimension(_) | Error::Capacity { .. } => 2,
        Error::Parse { .. } | Error::Io(_) | Error::File { .. } | Error::Json(_) | Error::UndefinedMetric(_) => 3,
        Error::Numeric(_) => 4,
    }
}

fn run(cli: Cli) -> tenet_core::Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(format!("--threads {n}: {e}")))?;
    }
    match cli.command {
        Command::GenSynth {
            out,
            n,
            size,
            seed,
            dims,
        } => commands::gen_synth(&out, n, size, seed, dims),
        Command::Train {
            config,
            data,
            out,
            history,
            dims,
            epochs,
            seed,
            lr,
            batch_size,
        } => commands::train(
            &config,
            data.as_deref(),
            &out,
            history.as_deref(),
            commands::TrainOverrides {
                dims,
                epochs,
                seed,
                lr,
                batch_size,
            },
        ),
        Command::Predict {
            model,
            input,
            output,
            soft,
        } => commands::predict(&model, &input, &output, soft.as_deref()),
        Command::Eval { model, data, report } => commands::eval(&model, &data, &report).map(|_| ()),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
