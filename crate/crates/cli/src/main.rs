use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use deckqa_cli::commands::{self, EvalArgs, SelectArgs, SelectMethod, TrainArgs};
use deckqa_cli::CliError;
use deckqa_model::Method;
use serde::Serialize;

#[derive(Parser)]
#[command(name = "deckqa", version, about = "Slide-deck question answering with generative evidence selection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus.
    Gen {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the configured method and save the best checkpoint by dev loss.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Loss trace CSV; defaults to `<out>.loss.csv`.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Score a checkpoint on a corpus split, or a prediction file against gold.
    Eval {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long, default_value = "dev")]
        split: String,
        #[arg(long)]
        method: Option<Method>,
        #[arg(long)]
        pred: Option<PathBuf>,
        #[arg(long)]
        gold: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Answer one question about one deck.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        deck: PathBuf,
        #[arg(long)]
        question: String,
    },
    /// Rank and select evidence pages without answering.
    Select {
        #[arg(long)]
        method: SelectMethod,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, default_value = "dev")]
        split: String,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value_t = 3)]
        k: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate an arithmetic expression.
    Calc { expr: String },
}

fn emit(out: Option<&Path>, value: &impl Serialize) -> Result<(), CliError> {
    match out {
        Some(path) => commands::write_json(path, value),
        None => {
            println!("{}", serde_json::to_string_pretty(value).expect("reports serialize"));
            Ok(())
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Gen { config, out } => {
            let stats = commands::gen(config.as_deref(), &out)?;
            emit(None, &stats.splits)
        }
        Command::Train { config, corpus, out, trace } => {
            let summary = commands::train(&TrainArgs {
                config: config.as_deref(),
                corpus: corpus.as_deref(),
                out: out.as_deref(),
                trace: trace.as_deref(),
            })?;
            emit(None, &summary)
        }
        Command::Eval { config, checkpoint, corpus, split, method, pred, gold, out } => {
            let report = commands::eval(&EvalArgs {
                config: config.as_deref(),
                checkpoint: checkpoint.as_deref(),
                corpus: corpus.as_deref(),
                split: &split,
                method,
                pred: pred.as_deref(),
                gold: gold.as_deref(),
            })?;
            emit(out.as_deref(), &report)
        }
        Command::Predict { checkpoint, deck, question } => {
            let answer = commands::predict(&checkpoint, &deck, &question)?;
            println!("{}", serde_json::to_string(&answer).expect("predictions serialize"));
            Ok(())
        }
        Command::Select { method, corpus, split, checkpoint, k, out } => {
            let report = commands::select(&SelectArgs { method, corpus: &corpus, split: &split, checkpoint: checkpoint.as_deref(), k })?;
            emit(out.as_deref(), &report)
        }
        Command::Calc { expr } => {
            println!("{}", commands::calc(&expr)?);
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
