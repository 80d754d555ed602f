//! `rgen`: dataset building, training, reranked decoding and evaluation from the command line.
//!
//! Every setting resolves as command-line flag, then the `[subcommand]` table of the
//! `--config` TOML file, then the built-in default shown in `--help`.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::config::{CliError, ConfigFile};

#[derive(Parser, Debug)]
#[command(
    name = "rgen",
    version,
    about = "Dual-encoder reranking for text generation"
)]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Global {
    /// TOML config file; top-level keys are global, `[subcommand]` tables per command.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Global seed [default: 0].
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads [default: available parallelism].
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Report format for evaluation commands [default: table].
    #[arg(long, global = true, value_enum)]
    pub format: Option<Format>,
    /// Directory for the manifest of runs without an output file [default: .].
    #[arg(long, global = true)]
    pub manifest_dir: Option<PathBuf>,
    /// More log output (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Json,
    Table,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Write the seeded synthetic topic corpus as JSONL.
    SynthCorpus(commands::SynthArgs),
    /// Extract prefix/continuation triples, optionally with generated negatives.
    BuildDataset(commands::BuildDatasetArgs),
    /// Train the interpolated n-gram language model.
    TrainLm(commands::TrainLmArgs),
    /// Train the dual encoder on a triple dataset.
    TrainEncoder(commands::TrainEncoderArgs),
    /// Reranked beam-search decoding of a file of prefixes.
    Decode(commands::DecodeArgs),
    /// Suffix-identification accuracy.
    EvalSuffixId(commands::EvalSuffixIdArgs),
    /// Mine hard negatives for every prefix of a corpus.
    MineHard(commands::MineHardArgs),
    /// Recall@k of gold continuations among the continuations of each document.
    EvalRetrieval(commands::EvalRetrievalArgs),
    /// Repetition, prefix overlap and MAUVE-style scores of decoded continuations.
    EvalGen(commands::EvalGenArgs),
    /// Time and score decoding over the (L, B, N) grid.
    GridSearch(commands::GridSearchArgs),
    /// Throughput of decoding and scoring.
    Bench(commands::BenchArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::SynthCorpus(_) => "synth-corpus",
            Command::BuildDataset(_) => "build-dataset",
            Command::TrainLm(_) => "train-lm",
            Command::TrainEncoder(_) => "train-encoder",
            Command::Decode(_) => "decode",
            Command::EvalSuffixId(_) => "eval-suffix-id",
            Command::MineHard(_) => "mine-hard",
            Command::EvalRetrieval(_) => "eval-retrieval",
            Command::EvalGen(_) => "eval-gen",
            Command::GridSearch(_) => "grid-search",
            Command::Bench(_) => "bench",
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let file = match &cli.global.config {
        Some(p) => ConfigFile::load(p)?,
        None => ConfigFile::default(),
    };
    let mut ctx = commands::Ctx::new(&cli.global, &file, cli.command.name())?;
    if let Some(jobs) = ctx.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| CliError::Runtime(format!("thread pool: {e}")))?;
    }
    match cli.command {
        Command::SynthCorpus(a) => commands::synth_corpus(a, &mut ctx)?,
        Command::BuildDataset(a) => commands::build_dataset(a, &mut ctx)?,
        Command::TrainLm(a) => commands::train_lm(a, &mut ctx)?,
        Command::TrainEncoder(a) => commands::train_encoder(a, &mut ctx)?,
        Command::Decode(a) => commands::decode(a, &mut ctx)?,
        Command::EvalSuffixId(a) => commands::eval_suffix_id(a, &mut ctx)?,
        Command::MineHard(a) => commands::mine_hard(a, &mut ctx)?,
        Command::EvalRetrieval(a) => commands::eval_retrieval(a, &mut ctx)?,
        Command::EvalGen(a) => commands::eval_gen(a, &mut ctx)?,
        Command::GridSearch(a) => commands::grid_search(a, &mut ctx)?,
        Command::Bench(a) => commands::bench(a, &mut ctx)?,
    }
    ctx.write_manifest()
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let level = match cli.global.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(m)) => {
            eprintln!("error: {m}\n\nFor more information, try '--help'.");
            ExitCode::from(1)
        }
        Err(CliError::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
    }
}
