//! `recouple`: generate preference data, build embeddings, train and
//! evaluate reward models, and run the experiment grids.
//!
//! Exit codes: 0 on success, 2 for usage, config and input errors, 3 when
//! training fails numerically.

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use recouple::embedding::SyntheticMode;
use recouple::harness::ExperimentName;
use recouple::objectives::Method;

#[derive(Parser)]
#[command(name = "recouple", version, about = "Rationale-grounded preference reward learning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate train and validation datasets from a world config.
    GenData(GenDataArgs),
    /// Embed a list of strings with the offline synthetic provider.
    EmbedSynth(EmbedSynthArgs),
    /// Train one reward model.
    Train(TrainArgs),
    /// Score a saved model on datasets.
    Eval(EvalArgs),
    /// Run a named experiment grid over seeds.
    Experiment(ExperimentArgs),
    /// Summarize a report CSV.
    Report(ReportArgs),
}

#[derive(Args)]
struct GenDataArgs {
    /// World config (JSON, tagged by "world").
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Overrides the config's seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct EmbedSynthArgs {
    /// One string per line; blank lines are skipped.
    #[arg(long)]
    strings: PathBuf,
    /// Provider config (JSON); the flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_parser = parse_mode)]
    mode: Option<SyntheticMode>,
    /// Paraphrase groups (JSON list) embedded around shared centroids.
    #[arg(long)]
    groups: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    /// Training config (JSON); defaults apply to missing fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dataset files, or directories whose `.jsonl` files are all read.
    #[arg(long, required = true, num_args = 1..)]
    data: Vec<PathBuf>,
    /// Validation datasets scored after training.
    #[arg(long, num_args = 1..)]
    val: Vec<PathBuf>,
    #[arg(long)]
    embeddings: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    method: Option<Method>,
    #[arg(long)]
    epochs: Option<usize>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long, required = true, num_args = 1..)]
    data: Vec<PathBuf>,
    #[arg(long)]
    embeddings: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ExperimentArgs {
    /// Experiment name; optional when --config names one.
    name: Option<ExperimentName>,
    /// Full experiment config (JSON) replacing the built-in default.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Runs a single seed instead of the configured list.
    #[arg(long, conflicts_with = "seeds")]
    seed: Option<u64>,
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Parallel training runs (default: available cores).
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Args)]
struct ReportArgs {
    /// A report CSV, or a directory containing `report.csv`.
    input: PathBuf,
    /// Also write `aggregates.csv` and a manifest here.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    json: bool,
}

fn parse_mode(s: &str) -> Result<SyntheticMode, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|_| "expected hash or compose".to_string())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    let numeric = err
        .chain()
        .filter_map(|e| e.downcast_ref::<recouple::Error>())
        .any(recouple::Error::is_numeric);
    if numeric {
        3
    } else {
        2
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenData(a) => commands::gen_data(a),
        Command::EmbedSynth(a) => commands::embed_synth(a),
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::Experiment(a) => commands::experiment(a),
        Command::Report(a) => commands::report(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
