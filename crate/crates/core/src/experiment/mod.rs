//! Training runs and the measurements taken on them.

mod analysis;
mod attention;
mod eval;
mod metrics;
mod train;

pub use analysis::{complexity_big, complexity_little, complexity_little_bound, token_usage, TokenUsage};
pub use attention::{carry_alignment, export_attention, AttentionDump, CarryAlignment};
pub use eval::{
    classify_error, classify_transcript, decode_budget, digit_breakdown, evaluate, score_outputs, taxonomy_csv,
    taxonomy_summary, DigitCell, DigitTable, ErrorClass, Evaluation, Transcript, EVAL_CHUNK,
};
pub use metrics::{MetricPoint, Metrics};
pub use train::{
    load_transcripts, train, transcripts_jsonl, RunConfig, RunOutcome, CHECKPOINT_FILE, METRICS_FILE, RUN_FILE,
    TRANSCRIPTS_FILE,
};

use thiserror::Error;

use crate::dataset::DatasetError;
use crate::model::ModelError;
use crate::tokenizer::TokenizerError;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid run: {0}")]
    Config(String),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tokenizer(#[from] TokenizerError),
    #[error("training failed at step {step}: {source}")]
    Training { step: u64, source: ModelError },
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
}

/// A rayon pool with `threads` workers; 0 picks the rayon default.
pub fn thread_pool(threads: usize) -> rayon::ThreadPool {
    rayon::ThreadPoolBuilder::new().num_threads(threads).build().expect("thread pool starts")
}
