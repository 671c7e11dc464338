//! `shiftcoref` command-line entry point.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::{CliError, CliResult, Ctx, PredictArgs};
use config::RunConfig;

#[derive(Debug, Parser)]
#[command(
    name = "shiftcoref",
    version,
    about = "Sentence-incremental shift-reduce coreference"
)]
struct Cli {
    /// TOML run configuration; defaults apply to missing keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for oracle, predict and score.
    #[arg(long, global = true, default_value_t = 1, value_parser = clap::value_parser!(u16).range(1..))]
    jobs: u16,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic corpus.
    Synth {
        #[arg(long)]
        out: PathBuf,
        /// Number of documents; overrides `synth.num_docs`.
        #[arg(long)]
        docs: Option<usize>,
    },
    /// Derive gold action sequences and check that they reproduce the clusters.
    Oracle {
        corpus: PathBuf,
        /// Write one action trace per document here.
        #[arg(long)]
        traces: Option<PathBuf>,
    },
    /// Train a model and write a checkpoint.
    Train {
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Decode a corpus with a trained checkpoint.
    Predict {
        corpus: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Sentences per window; overrides `window.k`.
        #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
        k: Option<u64>,
        /// Visible tokens per window; overrides `window.budget`.
        #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
        budget: Option<u64>,
        /// Write the non-singleton clusters after every window here.
        #[arg(long)]
        emit_partials: Option<PathBuf>,
    },
    /// Score predictions against gold clusters.
    Score {
        gold: PathBuf,
        pred: PathBuf,
        /// Score singleton clusters too.
        #[arg(long)]
        keep_singletons: bool,
        /// Also report scores with clusters split into segments of this many sentences.
        #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
        partition_size: Option<u64>,
        /// Write a machine-readable record here.
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Score with clusters split into segments of a fixed number of sentences.
    PartitionEval {
        gold: PathBuf,
        pred: PathBuf,
        #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
        partition_size: u64,
        #[arg(long)]
        json: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> CliResult {
    let config = RunConfig::load(cli.config.as_deref(), cli.seed).map_err(CliError::usage)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.jobs as usize)
        .build()?;
    let ctx = Ctx {
        config,
        explicit_config: cli.config.is_some(),
        pool,
    };
    match cli.command {
        Command::Synth { out, docs } => commands::synth(&ctx, &out, docs),
        Command::Oracle { corpus, traces } => commands::oracle(&ctx, &corpus, traces.as_deref()),
        Command::Train { corpus, out } => commands::train(&ctx, &corpus, &out),
        Command::Predict {
            corpus,
            checkpoint,
            out,
            k,
            budget,
            emit_partials,
        } => commands::predict(
            &ctx,
            PredictArgs {
                corpus: &corpus,
                checkpoint: &checkpoint,
                out: &out,
                k: k.map_or(ctx.config.window.k, |k| k as usize),
                budget: budget.map_or(ctx.config.window.budget, |b| b as usize),
                emit_partials: emit_partials.as_deref(),
            },
        ),
        Command::Score {
            gold,
            pred,
            keep_singletons,
            partition_size,
            json,
        } => commands::score(
            &ctx,
            &gold,
            &pred,
            keep_singletons,
            partition_size.map(|s| s as usize),
            json.as_deref(),
        ),
        Command::PartitionEval {
            gold,
            pred,
            partition_size,
            json,
        } => commands::partition(&ctx, &gold, &pred, partition_size as usize, json.as_deref()),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError { status, error }) => {
            eprintln!("error: {error:#}");
            ExitCode::from(status as u8)
        }
    }
}
