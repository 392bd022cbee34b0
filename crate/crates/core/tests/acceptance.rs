//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fail. Arguments select criteria by number (`5`, `c5`)
//! or by a substring of their name; flags are ignored.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use left_arith::dataset::{render_corpus, sample_meta, validate_manifest, CorpusRecord, MethodPlan, OperandMode, SplitSpec};
use left_arith::experiment::{
    classify_error, complexity_big, complexity_little, token_usage, train, ErrorClass, MetricPoint, RunConfig, RunOutcome,
    CHECKPOINT_FILE, METRICS_FILE,
};
use left_arith::model::{ModelConfig, OptimizerConfig, Parameters, Workspace, Batch};
use left_arith::tokenizer::Vocabulary;
use left_arith::tracegen::{self, mul_steps, verify_trace, DefectKind, MethodVariant, OpKind, Problem, Trace};
use left_arith::Numeral;
use num_bigint::{BigInt, BigUint};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Verdict = Result<String, String>;

struct Criterion {
    id: u32,
    name: &'static str,
    run: fn() -> Verdict,
}

const CRITERIA: &[Criterion] = &[
    Criterion { id: 1, name: "trace oracle soundness", run: c1_trace_oracle },
    Criterion { id: 2, name: "dataset invariants", run: c2_dataset },
    Criterion { id: 3, name: "gradient check", run: c3_gradients },
    Criterion { id: 4, name: "causality and normalization", run: c4_causality },
    Criterion { id: 5, name: "little-endian beats big-endian on direct addition", run: c5_endianness },
    Criterion { id: 6, name: "step-by-step needed for multiplication", run: c6_mul_steps },
    Criterion { id: 7, name: "token efficiency", run: c7_tokens },
    Criterion { id: 8, name: "error taxonomy", run: c8_taxonomy },
    Criterion { id: 9, name: "complexity estimators", run: c9_complexity },
    Criterion { id: 10, name: "pipeline determinism", run: c10_determinism },
];

fn selected(c: &Criterion, filters: &[String]) -> bool {
    filters.is_empty()
        || filters.iter().any(|f| {
            let f = f.to_lowercase();
            f == c.id.to_string() || f == format!("c{}", c.id) || c.name.contains(f.as_str())
        })
}

fn main() -> ExitCode {
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    let mut ran = 0;
    for c in CRITERIA.iter().filter(|c| selected(c, &filters)) {
        ran += 1;
        let start = Instant::now();
        let verdict = (c.run)();
        let secs = start.elapsed().as_secs_f64();
        match verdict {
            Ok(detail) => println!("PASS C{} {} ({secs:.1}s): {detail}", c.id, c.name),
            Err(detail) => {
                failed += 1;
                println!("FAIL C{} {} ({secs:.1}s): {detail}", c.id, c.name);
            }
        }
    }
    println!("acceptance: {} run, {} passed, {failed} failed", ran, ran - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

/// Nonnegative integer with a uniform digit count in `1..=max_digits`.
fn random_operand(rng: &mut ChaCha8Rng, max_digits: u32) -> u64 {
    let d = rng.random_range(1..=max_digits);
    if d == 1 {
        rng.random_range(0..10)
    } else {
        rng.random_range(10u64.pow(d - 1)..10u64.pow(d))
    }
}

fn big(v: u64) -> BigInt {
    BigInt::from(v)
}

// 1. Every generator's trace verifies clean and its answer matches an
// arbitrary-precision oracle computed here from plain integers.
fn c1_trace_oracle() -> Verdict {
    const PER_OP: usize = 100_000;
    let mut rng = ChaCha8Rng::seed_from_u64(0xC1);
    let mut traces = 0;
    for op in OpKind::ALL {
        let mut methods = vec![MethodPlan::left().method(op), MethodVariant::LE_STEP, MethodVariant::BE_STEP];
        methods.dedup();
        for n in 0..PER_OP {
            let (a, b) = (random_operand(&mut rng, 12), random_operand(&mut rng, 12));
            let expected = match op {
                OpKind::Add => big(a) + big(b),
                OpKind::Sub => big(a) - big(b),
                OpKind::Mul => big(a) * big(b),
            };
            let problem = Problem::from_u64(a, op, b);
            // the step variants rotate so each problem costs one or two traces
            let m = [methods[0], methods[1 + n % (methods.len() - 1)]];
            for method in m {
                let t = tracegen::generate(&problem, method).map_err(|e| format!("{problem}: {e}"))?;
                traces += 1;
                check(t.answer_value.to_integer() == expected, || format!("{problem} {}: answer {}", method.tag(), t.answer_value))?;
                let report = verify_trace(&t).map_err(|e| format!("{problem} {}: parse failure {e:?}", method.tag()))?;
                check(report.is_clean(), || format!("{problem} {}: defects {:?}", method.tag(), report.defects))?;
                check(report.answer.as_ref().map(Numeral::to_integer) == Some(expected.clone()), || {
                    format!("{problem} {}: verifier read answer {:?}", method.tag(), report.answer)
                })?;
            }
        }
    }
    Ok(format!("{} problems per op, {traces} traces verified clean, answers equal the oracle", PER_OP))
}

// 2. Default split: exact quotas, no shared unordered pair anywhere, and
// every method plan renders the same triplet set.
fn c2_dataset() -> Verdict {
    let spec = SplitSpec::default();
    let meta = sample_meta(&spec).map_err(|e| e.to_string())?;
    for (name, split, quota) in [("train", &meta.train, 625), ("test", &meta.test, 125)] {
        let mut cells: BTreeMap<(OpKind, usize), usize> = BTreeMap::new();
        for t in split {
            let digits = t.a.digit_count().max(t.b.digit_count());
            *cells.entry((t.op, digits)).or_default() += 1;
        }
        check(cells.len() == 3 * 8, || format!("{name}: {} cells", cells.len()))?;
        if let Some((cell, n)) = cells.iter().find(|(_, &n)| n != quota) {
            return Err(format!("{name} cell {cell:?} holds {n}, expected {quota}"));
        }
    }
    let mut pairs = HashSet::new();
    for t in meta.train.iter().chain(&meta.test) {
        let (x, y) = (t.a.to_integer(), t.b.to_integer());
        let key = if x <= y { (x, y) } else { (y, x) };
        check(pairs.insert(key.clone()), || format!("operand pair {key:?} appears twice"))?;
    }
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let plans = MethodPlan::builtin();
    render_corpus(&spec, &meta, &plans, dir.path()).map_err(|e| e.to_string())?;
    let report = validate_manifest(dir.path()).map_err(|e| e.to_string())?;
    check(report.is_clean(), || format!("validator defects: {:?}", &report.defects[..report.defects.len().min(5)]))?;
    let mut id_sets = BTreeSet::new();
    for plan in &plans {
        let mut ids = Vec::new();
        for split in ["train", "test"] {
            let records = left_arith::dataset::load_records(&dir.path().join(&plan.name).join(format!("{split}.jsonl")))
                .map_err(|e| e.to_string())?;
            ids.extend(records.iter().map(|r| (split, r.id, r.a.clone(), r.op, r.b.clone())));
        }
        id_sets.insert(ids);
    }
    check(id_sets.len() == 1, || format!("{} distinct triplet sets across plans", id_sets.len()))?;
    Ok(format!(
        "625/125 per cell over 24 cells, {} distinct pairs, {} plans share one triplet set, validator clean over {} records",
        pairs.len(),
        plans.len(),
        report.records_checked
    ))
}

// 3. Hand-written backward vs a fourth-order central difference, 20
// coordinates in every tensor of a tiny f64 model.
fn c3_gradients() -> Verdict {
    let config = ModelConfig { layers: 2, width: 16, heads: 2, ff_width: 32, context: 12, vocab_size: 9, seed: 31 };
    let mut p = Parameters::<f64>::init(&config).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(0xC3);
    for v in p.data.iter_mut() {
        *v += rng.random_range(-0.05..0.05);
    }
    let seqs: Vec<Vec<u32>> = (0..3).map(|_| (0..rng.random_range(5..=12)).map(|_| rng.random_range(1..9)).collect()).collect();
    let refs: Vec<&[u32]> = seqs.iter().map(Vec::as_slice).collect();
    let batch = Batch::from_sequences(&refs, &[3, 2, 4], true);
    let mut ws = Workspace::new();
    let mut grads = vec![0.0; p.len()];
    p.loss_and_grad(&mut ws, &batch, &mut grads).map_err(|e| e.to_string())?;
    let h = 1e-3;
    let mut worst = (0.0f64, String::new());
    let mut coords = 0;
    for (name, range) in p.tensor_ranges() {
        for _ in 0..20 {
            let i = rng.random_range(range.clone());
            let orig = p.data[i];
            let mut at = |x: f64| {
                p.data[i] = x;
                p.loss(&mut ws, &batch).unwrap()
            };
            let numeric = (8.0 * (at(orig + h) - at(orig - h)) - (at(orig + 2.0 * h) - at(orig - 2.0 * h))) / (12.0 * h);
            p.data[i] = orig;
            let err = (grads[i] - numeric).abs() / grads[i].abs().max(numeric.abs()).max(1e-6);
            coords += 1;
            if err > worst.0 {
                worst = (err, name.clone());
            }
        }
    }
    check(worst.0 < 1e-5, || format!("max relative error {:.2e} in {}", worst.0, worst.1))?;
    Ok(format!("{coords} coordinates over {} tensors, max relative error {:.2e} ({})", p.tensor_ranges().len(), worst.0, worst.1))
}

// 4. Future tokens never move past logits, and captured attention is
// row-stochastic with exact zeros above the diagonal.
fn c4_causality() -> Verdict {
    let config = ModelConfig { context: 48, vocab_size: 16, seed: 4, ..ModelConfig::default() };
    let p = Parameters::<f32>::init(&config).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(0xC4);
    let tokens: Vec<u32> = (0..48).map(|_| rng.random_range(1..16)).collect();
    let (base, capture) = p.forward(&tokens, true).map_err(|e| e.to_string())?;
    let v = config.vocab_size;
    let mut probes = 0;
    for t in 0..tokens.len() - 1 {
        let mut other = tokens.clone();
        for tok in &mut other[t + 1..] {
            *tok = rng.random_range(1..16);
        }
        let (logits, _) = p.forward(&other, false).map_err(|e| e.to_string())?;
        probes += 1;
        let same = base[..(t + 1) * v].iter().zip(&logits[..(t + 1) * v]).all(|(x, y)| x.to_bits() == y.to_bits());
        check(same, || format!("changing tokens after {t} moved earlier logits"))?;
    }
    let capture = capture.expect("capture requested");
    let n = capture.len;
    let mut worst = 0.0f64;
    let mut rows = 0;
    for l in 0..config.layers {
        for h in 0..config.heads {
            let m = capture.matrix(l, h);
            for r in 0..n {
                let row = &m[r * n..(r + 1) * n];
                worst = worst.max((row.iter().sum::<f64>() - 1.0).abs());
                check(row[r + 1..].iter().all(|&x| x == 0.0), || format!("layer {l} head {h} row {r} attends ahead"))?;
                rows += 1;
            }
        }
    }
    check(worst <= 1e-5, || format!("attention row sum off by {worst:.2e}"))?;
    Ok(format!("{probes} suffix perturbations left earlier logits bit-identical; {rows} attention rows, max |sum-1| {worst:.1e}"))
}

/// A run on the 3-digit corpora of `plan`, with progress on stderr.
fn run_plan(dir: &Path, plan: &str, run: &RunConfig) -> Result<RunOutcome, String> {
    let out = dir.join(format!("run-{plan}"));
    let run = RunConfig {
        train: vec![dir.join(plan).join("train.jsonl")],
        test: vec![dir.join(plan).join("test.jsonl")],
        ..run.clone()
    };
    let start = Instant::now();
    train(&run, &out, &mut |p: &MetricPoint| {
        eprintln!(
            "  [{plan} {:>6.0}s] epoch {:>2} step {:>5} tokens {:>9} loss {:.4} acc {:.3}",
            start.elapsed().as_secs_f64(),
            p.epoch,
            p.step,
            p.tokens,
            p.loss,
            p.acc_overall
        )
    })
    .map_err(|e| format!("{plan}: {e}"))
}

fn three_digit_corpus(dir: &Path, op: OpKind, plans: &[&str], seed: u64) -> Result<(), String> {
    let spec = SplitSpec {
        per_op_train: 10_000,
        per_op_test: 1_000,
        digit_lo: 3,
        digit_hi: 3,
        seed,
        ops: vec![op],
        operand_mode: OperandMode::Equal,
    };
    let meta = sample_meta(&spec).map_err(|e| e.to_string())?;
    let plans: Vec<MethodPlan> = plans.iter().map(|p| p.parse()).collect::<Result<_, _>>()?;
    render_corpus(&spec, &meta, &plans, dir).map_err(|e| e.to_string())?;
    Ok(())
}

fn desk_run(epochs: u32, batch_size: usize, lr: f64, weight_decay: f64, model_seed: u64) -> RunConfig {
    RunConfig {
        model: ModelConfig { seed: model_seed, ..ModelConfig::default() },
        optimizer: OptimizerConfig { lr, weight_decay, warmup: 50, ..OptimizerConfig::default() },
        batch_size,
        epochs,
        seed: 5,
        ..RunConfig::default()
    }
}

fn acc_trace(points: &[MetricPoint]) -> String {
    points.iter().map(|p| format!("{:.3}", p.acc_overall)).collect::<Vec<_>>().join(" ")
}

// 5. Same 3-digit addition problems, same model, same token budget: the
// little-endian answer is learned, the big-endian one lags at every point.
fn c5_endianness() -> Verdict {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    three_digit_corpus(dir.path(), OpKind::Add, &["le-direct", "be-direct"], 55)?;
    let run = desk_run(C5_EPOCHS, C5_BATCH, C5_LR, C5_WEIGHT_DECAY, C5_MODEL_SEED);
    let le = run_plan(dir.path(), "le-direct", &run)?;
    let be = run_plan(dir.path(), "be-direct", &run)?;
    let (lp, bp) = (&le.metrics.points, &be.metrics.points);
    check(lp.len() == bp.len(), || "runs logged different eval points".into())?;
    check(lp.iter().zip(bp).all(|(x, y)| x.tokens == y.tokens), || "token budgets differ".into())?;
    let trace = format!("LE [{}] BE [{}]", acc_trace(lp), acc_trace(bp));
    let final_le = lp.last().map(|p| p.acc_overall).unwrap_or(0.0);
    check(final_le >= 0.99, || format!("final LE ACC {final_le:.3} < 0.99; {trace}"))?;
    for (x, y) in lp.iter().zip(bp).filter(|(x, _)| x.epoch >= 2) {
        check(y.acc_overall < x.acc_overall, || {
            format!("epoch {}: BE {:.3} is not below LE {:.3}; {trace}", x.epoch, y.acc_overall, x.acc_overall)
        })?;
    }
    Ok(format!("final LE {final_le:.3}, BE {:.3} at {} tokens each; {trace}", bp.last().unwrap().acc_overall, lp.last().unwrap().tokens))
}

const C5_EPOCHS: u32 = 12;
const C5_BATCH: usize = 16;
const C5_LR: f64 = 5e-4;
const C5_WEIGHT_DECAY: f64 = 0.1;
const C5_MODEL_SEED: u64 = 2;

const C6_EPOCHS: u32 = 8;
const C6_BATCH: usize = 32;
const C6_LR: f64 = 1e-3;
const C6_WEIGHT_DECAY: f64 = 0.1;
const C6_MODEL_SEED: u64 = 2;

// 6. 3x3-digit multiplication: the little-endian step trace is learnable
// where the little-endian direct answer is not, at equal epochs.
fn c6_mul_steps() -> Verdict {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    three_digit_corpus(dir.path(), OpKind::Mul, &["le-step", "le-direct"], 66)?;
    // only the final points are compared; earlier ones are progress reports
    let run = RunConfig { eval_limit: 200, ..desk_run(C6_EPOCHS, C6_BATCH, C6_LR, C6_WEIGHT_DECAY, C6_MODEL_SEED) };
    let step = run_plan(dir.path(), "le-step", &run)?;
    let direct = run_plan(dir.path(), "le-direct", &run)?;
    let s = step.metrics.last().map(|p| p.acc_overall).unwrap_or(0.0);
    let d = direct.metrics.last().map(|p| p.acc_overall).unwrap_or(0.0);
    let trace = format!("step [{}] direct [{}]", acc_trace(&step.metrics.points), acc_trace(&direct.metrics.points));
    check(s - d >= 0.30, || format!("stepwise {s:.3} vs direct {d:.3} after {C6_EPOCHS} epochs; {trace}"))?;
    Ok(format!("after {C6_EPOCHS} epochs stepwise {s:.3} vs direct {d:.3} (+{:.1} pp); {trace}", (s - d) * 100.0))
}

// 7. Counted on the default corpus: direct addition is an order of
// magnitude cheaper than the column trace at 12 digits, and the LEFT plan
// is cheaper than stepwise everything.
fn c7_tokens() -> Verdict {
    let spec = SplitSpec::default();
    let meta = sample_meta(&spec).map_err(|e| e.to_string())?;
    let render = |plan: &MethodPlan| -> Result<Vec<CorpusRecord>, String> {
        meta.train
            .iter()
            .chain(&meta.test)
            .map(|t| CorpusRecord::render(t, plan.method(t.op)))
            .collect::<Result<_, _>>()
            .map_err(|e| e.to_string())
    };
    let left = render(&MethodPlan::left())?;
    let stepwise = render(&MethodPlan::uniform("le-step", MethodVariant::LE_STEP))?;
    let texts: Vec<String> = left.iter().chain(&stepwise).map(CorpusRecord::text).collect();
    let vocab = Vocabulary::build(texts.iter().map(String::as_str));
    let add12 = |rs: &[CorpusRecord]| -> Vec<CorpusRecord> {
        rs.iter().filter(|r| r.op == OpKind::Add && r.max_digits == 12).cloned().collect()
    };
    let direct = token_usage(&add12(&left), &vocab).map_err(|e| e.to_string())?;
    let column = token_usage(&add12(&stepwise), &vocab).map_err(|e| e.to_string())?;
    // independent count: one token per character plus EOS
    let by_chars: usize = add12(&left).iter().map(|r| r.prompt.chars().count() + r.target.chars().count() + 1).sum();
    check(by_chars == direct.total, || format!("token_usage {} disagrees with a character count {by_chars}", direct.total))?;
    let ratio = column.per_example() / direct.per_example();
    let total_left = token_usage(&left, &vocab).map_err(|e| e.to_string())?.total;
    let total_step = token_usage(&stepwise, &vocab).map_err(|e| e.to_string())?.total;
    let target_only = |rs: &[CorpusRecord]| {
        let rs = add12(rs);
        rs.iter().map(|r| r.target.chars().count() + 1).sum::<usize>() as f64 / rs.len() as f64
    };
    let target_ratio = target_only(&stepwise) / target_only(&left);
    let detail = format!(
        "12-digit add: direct {:.1} vs column {:.1} tokens/example (x{ratio:.2}; target side only x{target_ratio:.2}); corpus LEFT {total_left} vs all-stepwise {total_step}",
        direct.per_example(),
        column.per_example()
    );
    check(ratio >= 10.0, || detail.clone())?;
    check(total_left < total_step, || detail.clone())?;
    Ok(detail)
}

#[derive(Debug, Clone, Copy)]
enum Fault {
    None,
    Product(usize),
    Sum(usize),
    Answer,
    Grammar(usize),
}

/// Renders a little-endian step trace for `a*b` with one injected fault.
fn corrupted_trace(a: &Numeral, b: &Numeral, fault: Fault, rng: &mut ChaCha8Rng) -> String {
    let (mut records, product) = mul_steps(a, b);
    let bump = |n: &Numeral, by: u64| Numeral::from_integer(&(n.to_integer() + BigInt::from(by)));
    match fault {
        Fault::Product(i) => records[i].product = bump(&records[i].product, rng.random_range(1..=9)),
        // off by a multiple of ten keeps the fixed digit consistent
        Fault::Sum(i) => records[i].u_high_after = bump(&records[i].u_high_after, 10 * rng.random_range(1..=9)),
        _ => {}
    }
    let mut lines: Vec<String> = records.iter().map(|r| r.render(b, left_arith::Endianness::Little)).collect();
    if let Fault::Grammar(i) = fault {
        lines[i] = lines[i].replacen(" ; fix ", " ; fx ", 1);
    }
    let mut answer = product.digits().to_vec();
    if let Fault::Answer = fault {
        let k = rng.random_range(0..answer.len());
        answer[k] = (answer[k] + rng.random_range(1..=9)) % 10;
    }
    let answer: String = answer.iter().map(|d| char::from(b'0' + d)).collect();
    format!("{}\nA: {answer};;", lines.join("\n"))
}

// 8. Faults injected at known steps are classified back to exactly that
// class and step, and the verifier agrees on the first defect.
fn c8_taxonomy() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(0xC8);
    let mut tally: BTreeMap<&str, usize> = BTreeMap::new();
    for n in 0..1000 {
        let a = Numeral::from_u64(random_operand(&mut rng, 6).max(10));
        let b = Numeral::from_u64(random_operand(&mut rng, 6));
        let steps = a.digit_count();
        let i = rng.random_range(0..steps);
        let (fault, expected) = match n % 5 {
            0 => (Fault::Product(i), ErrorClass::ProductStep(i)),
            1 => (Fault::Sum(i), ErrorClass::SumStep(i)),
            2 => (Fault::Answer, ErrorClass::AnswerOnly),
            3 => (Fault::Grammar(i), ErrorClass::Formatting),
            _ => (Fault::None, ErrorClass::Correct),
        };
        let target = corrupted_trace(&a, &b, fault, &mut rng);
        let problem = Problem::new(a.clone(), OpKind::Mul, b.clone());
        let got = classify_error(&target, &problem, MethodVariant::LE_STEP);
        check(got == expected, || format!("{problem} with {fault:?}: classified {got}, expected {expected}"))?;
        // the verifier sees the same first defect on the whole trace
        let trace = Trace {
            prompt: problem.prompt(left_arith::Endianness::Little),
            steps: target.lines().filter(|l| !l.starts_with("A: ")).map(str::to_string).collect(),
            answer: target.rsplit("A: ").next().unwrap().trim_end_matches(";;").to_string(),
            answer_value: problem.oracle(),
            method: MethodVariant::LE_STEP,
            op: OpKind::Mul,
        };
        check(trace.target() == target, || "trace reassembly drifted".into())?;
        let first = verify_trace(&trace).ok().and_then(|r| r.defects.first().copied());
        let agrees = match (expected, first) {
            (ErrorClass::ProductStep(i), Some(d)) => d.kind == DefectKind::Product && d.step == Some(i),
            (ErrorClass::SumStep(i), Some(d)) => d.kind == DefectKind::Sum && d.step == Some(i),
            (ErrorClass::AnswerOnly, Some(d)) => d.kind == DefectKind::Answer,
            (ErrorClass::Formatting, None) => verify_trace(&trace).is_err(),
            (ErrorClass::Correct, None) => true,
            _ => false,
        };
        check(agrees, || format!("{problem} with {fault:?}: verifier first defect {first:?}"))?;
        *tally.entry(expected.name()).or_default() += 1;
    }
    Ok(format!("1000/1000 recovered ({tally:?})"))
}

// 9. Exact sums against their closed forms.
fn c9_complexity() -> Verdict {
    let ten = BigUint::from(10u32);
    for n in 0..=16u32 {
        let closed_big = (ten.pow(2 * n + 4) - BigUint::from(100u32)) / BigUint::from(99u32);
        check(complexity_big(n) == closed_big, || format!("complexity_big({n}) = {}, closed form {closed_big}", complexity_big(n)))?;
        let closed_little = BigUint::from(n + 1) * BigUint::from(100_000u32);
        check(complexity_little(n) == closed_little, || format!("complexity_little({n}) = {}", complexity_little(n)))?;
        if n >= 2 {
            check(complexity_little(n) < complexity_big(n), || format!("ordering fails at n = {n}"))?;
        }
    }
    Ok(format!("n in [0,16] match both closed forms; little < big for n >= 2 (big(16) = {})", complexity_big(16)))
}

fn pipeline(root: &Path) -> Result<Vec<(String, Vec<u8>)>, String> {
    let spec = SplitSpec { per_op_train: 400, per_op_test: 80, digit_lo: 2, digit_hi: 5, seed: 10, ..SplitSpec::default() };
    let meta = sample_meta(&spec).map_err(|e| e.to_string())?;
    let corpus = root.join("corpus");
    render_corpus(&spec, &meta, &MethodPlan::builtin(), &corpus).map_err(|e| e.to_string())?;
    let run = RunConfig {
        train: vec![corpus.join("left/train.jsonl")],
        test: vec![corpus.join("left/test.jsonl")],
        model: ModelConfig { layers: 2, width: 64, heads: 4, ff_width: 256, context: 512, ..ModelConfig::default() },
        batch_size: 32,
        epochs: 2,
        eval_every: 20,
        seed: 10,
        ..RunConfig::default()
    };
    let out = root.join("run");
    train(&run, &out, &mut |_| {}).map_err(|e| e.to_string())?;
    let mut files = Vec::new();
    let mut stack: Vec<PathBuf> = vec![corpus.clone()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).map_err(|e| e.to_string())? {
            let p = e.map_err(|e| e.to_string())?.path();
            if p.is_dir() {
                stack.push(p);
            } else {
                files.push((p.strip_prefix(root).unwrap().display().to_string(), std::fs::read(&p).map_err(|e| e.to_string())?));
            }
        }
    }
    for f in [METRICS_FILE, CHECKPOINT_FILE] {
        files.push((f.to_string(), std::fs::read(out.join(f)).map_err(|e| e.to_string())?));
    }
    files.sort();
    Ok(files)
}

// 10. Two complete runs (corpus generation, training, evaluation) agree
// byte for byte.
fn c10_determinism() -> Verdict {
    let (a, b) = (tempfile::tempdir().map_err(|e| e.to_string())?, tempfile::tempdir().map_err(|e| e.to_string())?);
    let first = pipeline(a.path())?;
    let second = pipeline(b.path())?;
    check(first.len() == second.len(), || "runs produced different file sets".into())?;
    for ((name, x), (_, y)) in first.iter().zip(&second) {
        check(x == y, || format!("{name} differs between runs"))?;
    }
    let bytes: usize = first.iter().map(|(_, b)| b.len()).sum();
    Ok(format!("{} files ({bytes} bytes) identical across two runs, metrics and checkpoint included", first.len()))
}
