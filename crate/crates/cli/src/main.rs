use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use cptag_cli::{run, CliError, RunConfig, Stage};
use cptag_core::corpus::SplitName;

#[derive(Parser)]
#[command(name = "cptag", version, about = "Tag prediction for competitive-programming problems")]
struct Cli {
    /// TOML run configuration; defaults apply to every missing field.
    #[arg(short, long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads for parallel stages; results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Validation,
    Test,
    All,
}

#[derive(Subcommand)]
enum Command {
    /// Load, validate, deduplicate and cap the raw corpus.
    Ingest,
    /// Chronological split and tag vocabulary.
    Split,
    /// Program graphs for every solution.
    GraphBuild,
    /// Gated graph network on train-split solution graphs.
    TrainGgnn,
    /// Attention aggregator over frozen GGNN solution vectors.
    TrainAgg,
    /// Transformer encoder on problem statements.
    TrainText,
    /// Software-metric and TF-IDF logistic regressions.
    TrainBaseline,
    /// Per-tag thresholds on the validation split.
    FitThresholds,
    /// Ensemble predictions as JSONL.
    Predict {
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
    },
    /// Test-split reports for every model.
    Evaluate,
    /// Pearson matrix between the models' per-tag PR-AUC.
    Correlate,
    /// Confident predictions of tags a problem lacks.
    Suggest,
    /// Write the synthetic corpus.
    SynthCorpus {
        /// Output directory instead of the configured corpus root.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn stage(c: Command) -> Stage {
    match c {
        Command::Ingest => Stage::Ingest,
        Command::Split => Stage::Split,
        Command::GraphBuild => Stage::GraphBuild,
        Command::TrainGgnn => Stage::TrainGgnn,
        Command::TrainAgg => Stage::TrainAgg,
        Command::TrainText => Stage::TrainText,
        Command::TrainBaseline => Stage::TrainBaseline,
        Command::FitThresholds => Stage::FitThresholds,
        Command::Predict { split } => Stage::Predict(match split {
            SplitArg::Train => Some(SplitName::Train),
            SplitArg::Validation => Some(SplitName::Validation),
            SplitArg::Test => Some(SplitName::Test),
            SplitArg::All => None,
        }),
        Command::Evaluate => Stage::Evaluate,
        Command::Correlate => Stage::Correlate,
        Command::Suggest => Stage::Suggest,
        Command::SynthCorpus { out } => Stage::SynthCorpus(out),
    }
}

fn execute(cli: Cli) -> Result<(), CliError> {
    let cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Config("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(e.to_string()))?;
    }
    run(&cfg, stage(cli.command))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
