//! The training controller.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::eval::{decode_budget, evaluate, Evaluation, Transcript};
use super::metrics::{MetricPoint, Metrics};
use super::ExperimentError;
use crate::dataset::{load_records, CorpusRecord};
use crate::fsutil::write_atomic;
use crate::model::{save_checkpoint, AdamW, Batch, Checkpoint, ModelConfig, OptimizerConfig, Parameters, Workspace};
use crate::tokenizer::{TokenId, Vocabulary};
use crate::tracegen::{MethodVariant, OpKind};

pub const METRICS_FILE: &str = "metrics.csv";
pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const TRANSCRIPTS_FILE: &str = "transcripts.jsonl";
pub const RUN_FILE: &str = "run.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    /// JSONL corpora trained on jointly.
    pub train: Vec<PathBuf>,
    /// JSONL corpora evaluated at every eval point.
    pub test: Vec<PathBuf>,
    /// Expected method per op; records must agree. Empty accepts whatever
    /// the corpora hold, provided each op uses a single method.
    pub methods: BTreeMap<OpKind, MethodVariant>,
    /// `vocab_size` is replaced by the size of the corpus vocabulary.
    pub model: ModelConfig,
    /// A zero `total_steps` is replaced by the length of the run.
    pub optimizer: OptimizerConfig,
    pub batch_size: usize,
    pub epochs: u32,
    /// Extra eval points every this many steps; 0 evaluates at step 0 and
    /// after each epoch only.
    pub eval_every: u64,
    /// Test examples used at intermediate eval points; 0 uses all. The final
    /// point always uses the full test set.
    pub eval_limit: usize,
    /// Supervise only the tokens after the prompt.
    pub mask_prompt: bool,
    /// Shuffle seed; the init seed lives in `model.seed`.
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            train: Vec::new(),
            test: Vec::new(),
            methods: BTreeMap::new(),
            model: ModelConfig::default(),
            optimizer: OptimizerConfig::default(),
            batch_size: 32,
            epochs: 1,
            eval_every: 0,
            eval_limit: 0,
            mask_prompt: true,
            seed: 0,
        }
    }
}

/// Records of a run encoded against one vocabulary.
struct Encoded {
    seqs: Vec<Vec<TokenId>>,
    prompt_lens: Vec<usize>,
}

fn load_all(paths: &[PathBuf]) -> Result<Vec<CorpusRecord>, ExperimentError> {
    let mut out = Vec::new();
    for p in paths {
        out.extend(load_records(p)?);
    }
    Ok(out)
}

fn check_methods(run: &RunConfig, records: &[CorpusRecord]) -> Result<BTreeMap<OpKind, MethodVariant>, ExperimentError> {
    let mut seen: BTreeMap<OpKind, BTreeSet<String>> = BTreeMap::new();
    for r in records {
        seen.entry(r.op).or_default().insert(r.method.clone());
    }
    let mut methods = BTreeMap::new();
    for (op, tags) in seen {
        if tags.len() != 1 {
            return Err(ExperimentError::Config(format!("{op} records mix methods {tags:?}")));
        }
        let tag = tags.into_iter().next().unwrap();
        let method: MethodVariant = tag.parse().map_err(|e: String| ExperimentError::Config(e))?;
        if let Some(want) = run.methods.get(&op) {
            if *want != method {
                return Err(ExperimentError::Config(format!("{op} records use {tag}, run expects {}", want.tag())));
            }
        }
        methods.insert(op, method);
    }
    Ok(methods)
}

fn encode(records: &[CorpusRecord], vocab: &Vocabulary) -> Result<Encoded, ExperimentError> {
    let mut seqs = Vec::with_capacity(records.len());
    let mut prompt_lens = Vec::with_capacity(records.len());
    for r in records {
        seqs.push(vocab.encode_example(&r.prompt, &r.target)?);
        prompt_lens.push(r.prompt.chars().count());
    }
    Ok(Encoded { seqs, prompt_lens })
}

/// Everything a finished run produced.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub metrics: Metrics,
    pub checkpoint: Checkpoint,
    pub evaluation: Evaluation,
    pub vocabulary: Vocabulary,
    pub methods: BTreeMap<OpKind, MethodVariant>,
}

/// Trains per `run` and writes metrics, the final checkpoint, final-eval
/// transcripts and the resolved config into `out_dir`. `on_point` sees each
/// metric point as it is logged.
pub fn train(run: &RunConfig, out_dir: &Path, on_point: &mut dyn FnMut(&MetricPoint)) -> Result<RunOutcome, ExperimentError> {
    if run.batch_size == 0 {
        return Err(ExperimentError::Config("batch_size must be positive".into()));
    }
    if run.train.is_empty() || run.test.is_empty() {
        return Err(ExperimentError::Config("a run needs train and test corpora".into()));
    }
    let train_records = load_all(&run.train)?;
    let test_records = load_all(&run.test)?;
    if train_records.is_empty() {
        return Err(ExperimentError::Config("training corpora are empty".into()));
    }
    let methods = check_methods(run, &train_records)?;
    let texts: Vec<String> = train_records.iter().chain(&test_records).map(|r| r.text()).collect();
    let vocab = Vocabulary::build(texts.iter().map(String::as_str));
    let data = encode(&train_records, &vocab)?;

    let mut config = run.model.clone();
    config.vocab_size = vocab.len();
    let longest = data.seqs.iter().map(|s| s.len() - 1).max().unwrap_or(0);
    if longest > config.context {
        return Err(ExperimentError::Config(format!(
            "longest training sequence has {longest} input tokens, context is {}",
            config.context
        )));
    }
    let mut params = Parameters::<f32>::init(&config)?;
    let steps_per_epoch = train_records.len().div_ceil(run.batch_size) as u64;
    let mut opt_cfg = run.optimizer.clone();
    if opt_cfg.total_steps == 0 {
        opt_cfg.total_steps = steps_per_epoch * run.epochs as u64;
    }
    let mut opt = AdamW::new(opt_cfg, &params);
    let mut ws = Workspace::new();
    let mut grads = vec![0.0f32; params.len()];

    let mut buckets: Vec<usize> = test_records.iter().map(|r| r.max_digits).collect::<BTreeSet<_>>().into_iter().collect();
    buckets.sort_unstable();
    let mut metrics = Metrics { buckets, points: Vec::new() };
    let max_new = decode_budget(&test_records);
    let probe: &[CorpusRecord] =
        if run.eval_limit == 0 { &test_records } else { &test_records[..run.eval_limit.min(test_records.len())] };

    let order_for = |epoch: u32| {
        let mut order: Vec<usize> = (0..data.seqs.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(run.seed);
        rng.set_stream(epoch as u64);
        order.shuffle(&mut rng);
        order
    };
    let batch_of = |idx: &[usize]| {
        let seqs: Vec<&[TokenId]> = idx.iter().map(|&i| data.seqs[i].as_slice()).collect();
        let plens: Vec<usize> = idx.iter().map(|&i| data.prompt_lens[i]).collect();
        Batch::from_sequences(&seqs, &plens, run.mask_prompt)
    };

    let record_point = |metrics: &mut Metrics,
                        params: &Parameters<f32>,
                        step: u64,
                        epoch: u32,
                        tokens: u64,
                        loss: f64,
                        records: &[CorpusRecord],
                        on_point: &mut dyn FnMut(&MetricPoint)|
     -> Result<Evaluation, ExperimentError> {
        let eval = evaluate(params, &vocab, records, max_new)?;
        let point = MetricPoint {
            step,
            epoch,
            tokens,
            loss,
            acc: OpKind::ALL.iter().filter_map(|&op| eval.acc_op(op).map(|a| (op, a))).collect(),
            acc_overall: eval.acc().unwrap_or(0.0),
            acc_buckets: metrics.buckets.iter().filter_map(|&d| eval.acc_bucket(d).map(|a| (d, a))).collect(),
        };
        on_point(&point);
        metrics.points.push(point);
        Ok(eval)
    };

    let first = order_for(0);
    let initial_loss = params.loss(&mut ws, &batch_of(&first[..run.batch_size.min(first.len())]))? as f64;
    let mut evaluation =
        record_point(&mut metrics, &params, 0, 0, 0, initial_loss, if run.epochs == 0 { &test_records } else { probe }, on_point)?;

    let (mut step, mut tokens) = (0u64, 0u64);
    let (mut loss_sum, mut loss_n) = (0.0f64, 0usize);
    for epoch in 0..run.epochs {
        let order = if epoch == 0 { first.clone() } else { order_for(epoch) };
        for idx in order.chunks(run.batch_size) {
            let batch = batch_of(idx);
            let loss = params
                .loss_and_grad(&mut ws, &batch, &mut grads)
                .map_err(|source| ExperimentError::Training { step, source })?;
            opt.step(&mut params, &mut grads).map_err(|source| ExperimentError::Training { step, source })?;
            step += 1;
            tokens += idx.iter().map(|&i| data.seqs[i].len() as u64).sum::<u64>();
            loss_sum += loss as f64;
            loss_n += 1;
            let last_step = epoch + 1 == run.epochs && step == steps_per_epoch * run.epochs as u64;
            let epoch_end = step % steps_per_epoch == 0;
            if epoch_end || (run.eval_every > 0 && step % run.eval_every == 0) {
                let records = if last_step { &test_records[..] } else { probe };
                let mean = loss_sum / loss_n.max(1) as f64;
                evaluation = record_point(&mut metrics, &params, step, epoch + epoch_end as u32, tokens, mean, records, on_point)?;
                loss_sum = 0.0;
                loss_n = 0;
            }
        }
    }

    let checkpoint = Checkpoint { params, vocabulary: vocab.clone(), steps: step };
    write_atomic(&out_dir.join(METRICS_FILE), metrics.to_csv().as_bytes()).map_err(|e| io_err(out_dir, METRICS_FILE, e))?;
    save_checkpoint(&out_dir.join(CHECKPOINT_FILE), &checkpoint)?;
    write_atomic(&out_dir.join(TRANSCRIPTS_FILE), transcripts_jsonl(&evaluation.transcripts).as_bytes())
        .map_err(|e| io_err(out_dir, TRANSCRIPTS_FILE, e))?;
    let resolved = serde_json::to_string_pretty(run).expect("run config serializes") + "\n";
    write_atomic(&out_dir.join(RUN_FILE), resolved.as_bytes()).map_err(|e| io_err(out_dir, RUN_FILE, e))?;
    Ok(RunOutcome { metrics, checkpoint, evaluation, vocabulary: vocab, methods })
}

fn io_err(dir: &Path, file: &str, source: std::io::Error) -> ExperimentError {
    ExperimentError::Io { path: dir.join(file).display().to_string(), source }
}

pub fn transcripts_jsonl(transcripts: &[Transcript]) -> String {
    transcripts.iter().map(|t| serde_json::to_string(t).expect("transcript serializes") + "\n").collect()
}

pub fn load_transcripts(path: &Path) -> Result<Vec<Transcript>, ExperimentError> {
    let text = std::fs::read_to_string(path).map_err(|source| ExperimentError::Io { path: path.display().to_string(), source })?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| ExperimentError::Config(format!("{}:{}: {e}", path.display(), i + 1)))
        })
        .collect()
}
