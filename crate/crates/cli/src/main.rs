//! `left-arith`: corpus generation, validation, training and analysis.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

/// Exit status for runs that found defects (or failed at runtime).
pub const EXIT_DEFECTS: u8 = 1;
/// Exit status for bad flags, keys or values.
pub const EXIT_USAGE: u8 = 2;

#[derive(Debug, Parser)]
#[command(name = "left-arith", version, about = "Little-endian arithmetic corpora, training and analysis")]
pub struct Cli {
    /// Directory every relative path is resolved against.
    #[arg(long, global = true, default_value = ".")]
    pub workdir: PathBuf,
    /// Worker threads for evaluation; falls back to LEFT_ARITH_THREADS.
    #[arg(long, global = true, env = "LEFT_ARITH_THREADS")]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

/// Config-file and `--set` overrides shared by configurable commands.
#[derive(Debug, Clone, Args)]
pub struct Overrides {
    /// `key = value` file; flags win over its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override one key, e.g. `--set model.width=64`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sample meta triplets and render every method plan.
    GenData {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Method plans to render (comma-separated); default all built-ins.
        #[arg(long, value_delimiter = ',')]
        plans: Vec<String>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Check digests, balance, isolation and fairness of a corpus directory.
    Validate { dir: PathBuf },
    /// Train a model; writes metrics, checkpoint and transcripts.
    Train {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_delimiter = ',')]
        train: Vec<PathBuf>,
        #[arg(long, value_delimiter = ',')]
        test: Vec<PathBuf>,
        #[arg(long)]
        epochs: Option<u32>,
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Greedy-decode a test corpus with a checkpoint and score it.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        test: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// First-defect taxonomy of evaluation transcripts (`id,class,step_index`).
    AnalyzeErrors {
        #[arg(long)]
        transcripts: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Accuracy per op and max-digit bucket.
    DigitTable {
        #[arg(long)]
        transcripts: PathBuf,
        #[arg(long, default_value_t = 5)]
        digit_lo: usize,
        #[arg(long, default_value_t = 12)]
        digit_hi: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Token cost of corpora (files, or directories with a manifest).
    Tokens {
        #[arg(required = true)]
        paths: Vec<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Learning-complexity sums for big- and little-endian answers.
    Complexity {
        #[arg(long)]
        n: u32,
        /// Also print every value up to this n.
        #[arg(long)]
        to: Option<u32>,
    },
    /// Print every config key of `gen-data` or `train` with its default.
    Keys {
        #[arg(value_parser = ["gen-data", "train"])]
        command: String,
    },
    /// Dump per-head attention matrices for one input.
    AttentionDump {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Text to run, e.g. `321+54=` or a full prompt and answer.
        #[arg(long)]
        text: String,
        #[arg(long, value_delimiter = ',')]
        layers: Vec<usize>,
        #[arg(long, value_delimiter = ',')]
        heads: Vec<usize>,
        #[arg(long)]
        out: PathBuf,
        /// Little-endian direct addition corpus to score carry alignment on.
        #[arg(long)]
        carry_probe: Option<PathBuf>,
    },
}

/// A failed command and the status it maps to.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Defects(String),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let pool = left_arith::experiment::thread_pool(cli.threads.unwrap_or(0));
    match pool.install(|| commands::run(&cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_USAGE)
        }
        Err(Failure::Defects(msg)) => {
            eprintln!("{msg}");
            ExitCode::from(EXIT_DEFECTS)
        }
    }
}
