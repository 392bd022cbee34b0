//! Criterion benchmarks for trace generation, auditing and the model.

use criterion::{BenchmarkId, Criterion, Throughput};
use left_arith::model::{generate_batch, AdamW, Batch, ModelConfig, OptimizerConfig, Parameters, Workspace};
use left_arith::tracegen::{generate, verify_trace, MethodVariant, OpKind, Problem};
use left_arith::{Endianness, Numeral, ParseMode};

fn twelve_digit_problem(op: OpKind) -> Problem {
    Problem::from_u64(918_273_645_501, op, 564_738_291_019)
}

pub fn tracegen(c: &mut Criterion) {
    let mut g = c.benchmark_group("tracegen");
    for (name, op, method) in [
        ("add_direct", OpKind::Add, MethodVariant::LE_DIRECT),
        ("add_step", OpKind::Add, MethodVariant::LE_STEP),
        ("mul_step", OpKind::Mul, MethodVariant::LE_STEP),
    ] {
        let p = twelve_digit_problem(op);
        g.bench_function(BenchmarkId::new("generate", name), |b| b.iter(|| generate(&p, method).unwrap()));
        let t = generate(&p, method).unwrap();
        g.bench_function(BenchmarkId::new("verify", name), |b| b.iter(|| verify_trace(&t).unwrap()));
    }
    g.finish();
}

pub fn numeral(c: &mut Criterion) {
    let text = "918273645501918273645501";
    c.bench_function("numeral/parse_render_le", |b| {
        b.iter(|| Numeral::parse(text, Endianness::Little, ParseMode::Strict).unwrap().render(Endianness::Little))
    });
}

fn model_config() -> ModelConfig {
    ModelConfig { vocab_size: 16, context: 64, ..ModelConfig::default() }
}

pub fn model(c: &mut Criterion) {
    let config = model_config();
    let mut params = Parameters::<f32>::init(&config).unwrap();
    let seqs: Vec<Vec<u32>> = (0..32u32).map(|i| (0..16).map(|t| 2 + (i * 7 + t * 3) % 12).collect()).collect();
    let refs: Vec<&[u32]> = seqs.iter().map(Vec::as_slice).collect();
    let batch = Batch::from_sequences(&refs, &[8; 32], true);
    let mut ws = Workspace::new();
    let mut grads = vec![0.0f32; params.len()];
    let mut opt = AdamW::new(OptimizerConfig::default(), &params);

    let mut g = c.benchmark_group("model");
    g.throughput(Throughput::Elements(batch.rows() as u64));
    g.bench_function("train_step_32x15", |b| {
        b.iter(|| {
            params.loss_and_grad(&mut ws, &batch, &mut grads).unwrap();
            opt.step(&mut params, &mut grads).unwrap();
        })
    });
    let prompts: Vec<Vec<u32>> = seqs.iter().map(|s| s[..8].to_vec()).collect();
    g.throughput(Throughput::Elements(prompts.len() as u64 * 8));
    g.bench_function("greedy_decode_32x8", |b| b.iter(|| generate_batch(&params, &prompts, 8).unwrap()));
    g.finish();
}

pub fn benchmarks(c: &mut Criterion) {
    tracegen(c);
    numeral(c);
    model(c);
}
