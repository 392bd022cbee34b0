use std::path::{Path, PathBuf};

use left_arith::dataset::{
    load_manifest, load_records, render_corpus, sample_meta, validate_manifest, CorpusRecord, MethodPlan, SplitSpec,
};
use left_arith::experiment::{
    carry_alignment, complexity_big, complexity_little, digit_breakdown, evaluate, export_attention, load_transcripts,
    taxonomy_csv, taxonomy_summary, token_usage, train, transcripts_jsonl, RunConfig, TRANSCRIPTS_FILE,
};
use left_arith::fsutil::write_atomic;
use left_arith::model::load_checkpoint;
use left_arith::tokenizer::Vocabulary;
use left_arith::tracegen::{OpKind, Problem};

use crate::config::{flag_setting, keys_of, overlay, read_settings, Setting};
use crate::{Cli, Command, Failure, Overrides};

type Outcome = Result<(), Failure>;

fn fail(e: impl std::fmt::Display) -> Failure {
    Failure::Defects(format!("error: {e}"))
}

struct Ctx<'a> {
    workdir: &'a Path,
}

impl Ctx<'_> {
    fn path(&self, p: &Path) -> PathBuf {
        self.workdir.join(p)
    }

    fn settings(&self, o: &Overrides) -> Result<Vec<Setting>, Failure> {
        let mut out = match &o.config {
            Some(p) => read_settings(&self.path(p)).map_err(Failure::Usage)?,
            None => Vec::new(),
        };
        for raw in &o.set {
            out.push(flag_setting(raw).map_err(Failure::Usage)?);
        }
        Ok(out)
    }

    fn write(&self, path: &Path, bytes: &[u8]) -> Outcome {
        write_atomic(path, bytes).map_err(|e| fail(format!("{}: {e}", path.display())))
    }
}

pub fn run(cli: &Cli) -> Outcome {
    let ctx = Ctx { workdir: &cli.workdir };
    match &cli.command {
        Command::GenData { out, seed, plans, overrides } => gen_data(&ctx, out, *seed, plans, overrides),
        Command::Validate { dir } => validate(&ctx, dir),
        Command::Train { out, train, test, epochs, seed, overrides } => {
            train_cmd(&ctx, out, train, test, *epochs, *seed, overrides)
        }
        Command::Eval { checkpoint, test, out } => eval(&ctx, checkpoint, test, out),
        Command::AnalyzeErrors { transcripts, out } => analyze_errors(&ctx, transcripts, out),
        Command::DigitTable { transcripts, digit_lo, digit_hi, out } => {
            digit_table(&ctx, transcripts, *digit_lo, *digit_hi, out.as_deref())
        }
        Command::Tokens { paths, out } => tokens(&ctx, paths, out.as_deref()),
        Command::Complexity { n, to } => {
            complexity(*n, *to);
            Ok(())
        }
        Command::Keys { command } => {
            let keys = if command == "train" { keys_of(&RunConfig::default()) } else { keys_of(&SplitSpec::default()) };
            for (k, v) in keys {
                println!("{k} = {v}");
            }
            Ok(())
        }
        Command::AttentionDump { checkpoint, text, layers, heads, out, carry_probe } => {
            attention_dump(&ctx, checkpoint, text, layers, heads, out, carry_probe.as_deref())
        }
    }
}

fn gen_data(ctx: &Ctx, out: &Path, seed: Option<u64>, plans: &[String], o: &Overrides) -> Outcome {
    let mut spec: SplitSpec = overlay(&SplitSpec::default(), &ctx.settings(o)?).map_err(Failure::Usage)?;
    if let Some(s) = seed {
        spec.seed = s;
    }
    let plans: Vec<MethodPlan> = if plans.is_empty() {
        MethodPlan::builtin()
    } else {
        plans.iter().map(|p| p.parse()).collect::<Result<_, String>>().map_err(|e| Failure::Usage(format!("--plans: {e}")))?
    };
    spec.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    let meta = sample_meta(&spec).map_err(fail)?;
    let manifest = render_corpus(&spec, &meta, &plans, &ctx.path(out)).map_err(fail)?;
    for f in &manifest.files {
        println!("{}\t{}\t{}", f.path, f.records, f.sha256);
    }
    Ok(())
}

fn validate(ctx: &Ctx, dir: &Path) -> Outcome {
    let report = validate_manifest(&ctx.path(dir)).map_err(fail)?;
    if report.defects.is_empty() {
        println!("ok: {} records checked", report.records_checked);
        return Ok(());
    }
    let mut msg = format!("{} defects in {} records:", report.defects.len(), report.records_checked);
    for d in &report.defects {
        msg.push_str(&format!("\n  {d}"));
    }
    Err(Failure::Defects(msg))
}

fn train_cmd(
    ctx: &Ctx,
    out: &Path,
    train_paths: &[PathBuf],
    test_paths: &[PathBuf],
    epochs: Option<u32>,
    seed: Option<u64>,
    o: &Overrides,
) -> Outcome {
    let mut run: RunConfig = overlay(&RunConfig::default(), &ctx.settings(o)?).map_err(Failure::Usage)?;
    if !train_paths.is_empty() {
        run.train = train_paths.to_vec();
    }
    if !test_paths.is_empty() {
        run.test = test_paths.to_vec();
    }
    if let Some(e) = epochs {
        run.epochs = e;
    }
    if let Some(s) = seed {
        run.seed = s;
    }
    if run.train.is_empty() || run.test.is_empty() {
        return Err(Failure::Usage("train needs --train and --test corpora (or train/test keys)".into()));
    }
    run.train = run.train.iter().map(|p| ctx.path(p)).collect();
    run.test = run.test.iter().map(|p| ctx.path(p)).collect();
    let outcome = train(&run, &ctx.path(out), &mut |p| {
        eprintln!("step {} epoch {} tokens {} loss {:.4} acc {:.4}", p.step, p.epoch, p.tokens, p.loss, p.acc_overall)
    })
    .map_err(fail)?;
    if let Some(p) = outcome.metrics.last() {
        println!("final acc {:.4} after {} steps", p.acc_overall, p.step);
    }
    Ok(())
}

fn load_all(ctx: &Ctx, paths: &[PathBuf]) -> Result<Vec<CorpusRecord>, Failure> {
    let mut out = Vec::new();
    for p in paths {
        out.extend(load_records(&ctx.path(p)).map_err(fail)?);
    }
    Ok(out)
}

fn eval(ctx: &Ctx, checkpoint: &Path, test: &[PathBuf], out: &Path) -> Outcome {
    let ck = load_checkpoint(&ctx.path(checkpoint)).map_err(fail)?;
    let records = load_all(ctx, test)?;
    let max_new = left_arith::experiment::decode_budget(&records);
    let eval = evaluate(&ck.params, &ck.vocabulary, &records, max_new).map_err(fail)?;
    ctx.write(&ctx.path(out).join(TRANSCRIPTS_FILE), transcripts_jsonl(&eval.transcripts).as_bytes())?;
    for op in OpKind::ALL {
        if let Some(acc) = eval.acc_op(op) {
            println!("acc_{}\t{acc:.4}", op.tag());
        }
    }
    println!("acc_overall\t{:.4}", eval.acc().unwrap_or(0.0));
    Ok(())
}

fn analyze_errors(ctx: &Ctx, transcripts: &Path, out: &Path) -> Outcome {
    let ts = load_transcripts(&ctx.path(transcripts)).map_err(fail)?;
    ctx.write(&ctx.path(out), taxonomy_csv(&ts).as_bytes())?;
    for (class, n) in taxonomy_summary(&ts) {
        println!("{class}\t{n}");
    }
    Ok(())
}

fn digit_table(ctx: &Ctx, transcripts: &Path, lo: usize, hi: usize, out: Option<&Path>) -> Outcome {
    if lo == 0 || lo > hi {
        return Err(Failure::Usage(format!("--digit-lo {lo} --digit-hi {hi} is not a digit range")));
    }
    let ts = load_transcripts(&ctx.path(transcripts)).map_err(fail)?;
    let csv = digit_breakdown(&ts, lo..=hi).to_csv();
    match out {
        Some(p) => ctx.write(&ctx.path(p), csv.as_bytes()),
        None => {
            print!("{csv}");
            Ok(())
        }
    }
}

/// Corpus files named directly or listed by a manifest directory.
fn corpus_files(ctx: &Ctx, paths: &[PathBuf]) -> Result<Vec<(String, PathBuf)>, Failure> {
    let mut out = Vec::new();
    for p in paths {
        let full = ctx.path(p);
        if full.is_dir() {
            let manifest = load_manifest(&full).map_err(fail)?;
            out.extend(manifest.files.iter().map(|f| (f.path.clone(), full.join(&f.path))));
        } else {
            out.push((p.display().to_string(), full));
        }
    }
    Ok(out)
}

fn tokens(ctx: &Ctx, paths: &[PathBuf], out: Option<&Path>) -> Outcome {
    let files = corpus_files(ctx, paths)?;
    let mut loaded = Vec::new();
    for (name, path) in files {
        loaded.push((name, load_records(&path).map_err(fail)?));
    }
    let vocab = Vocabulary::build(loaded.iter().flat_map(|(_, rs)| rs.iter().map(|r| r.text())).collect::<Vec<_>>().iter().map(String::as_str));
    let mut csv = String::from("corpus,examples,total,add,sub,mul,per_example\n");
    for (name, records) in &loaded {
        let u = token_usage(records, &vocab).map_err(fail)?;
        let per = |op| u.per_op.get(&op).copied().unwrap_or(0);
        csv.push_str(&format!(
            "{name},{},{},{},{},{},{:.2}\n",
            u.examples,
            u.total,
            per(OpKind::Add),
            per(OpKind::Sub),
            per(OpKind::Mul),
            u.per_example()
        ));
    }
    match out {
        Some(p) => ctx.write(&ctx.path(p), csv.as_bytes()),
        None => {
            print!("{csv}");
            Ok(())
        }
    }
}

fn complexity(n: u32, to: Option<u32>) {
    println!("n\tbig\tlittle");
    for k in n..=to.unwrap_or(n).max(n) {
        println!("{k}\t{}\t{}", complexity_big(k), complexity_little(k));
    }
}

fn attention_dump(
    ctx: &Ctx,
    checkpoint: &Path,
    text: &str,
    layers: &[usize],
    heads: &[usize],
    out: &Path,
    carry_probe: Option<&Path>,
) -> Outcome {
    let ck = load_checkpoint(&ctx.path(checkpoint)).map_err(fail)?;
    let tokens = ck.vocabulary.encode(text).map_err(|e| Failure::Usage(format!("--text: {e}")))?;
    let dumps = export_attention(&ck.params, &ck.vocabulary, &tokens, layers, heads).map_err(|e| Failure::Usage(e.to_string()))?;
    let dir = ctx.path(out);
    for d in &dumps {
        let json = serde_json::to_string(d).expect("dump serializes") + "\n";
        ctx.write(&dir.join(d.file_name()), json.as_bytes())?;
    }
    println!("wrote {} matrices to {}", dumps.len(), dir.display());
    if let Some(probe) = carry_probe {
        let records = load_records(&ctx.path(probe)).map_err(fail)?;
        let problems: Vec<Problem> = records
            .iter()
            .filter(|r| r.op == OpKind::Add)
            .map(|r| r.problem().map_err(fail))
            .collect::<Result<_, _>>()?;
        let diag = carry_alignment(&ck.params, &ck.vocabulary, &problems).map_err(fail)?;
        let mut csv = String::from("layer,head,carry_aligned\n");
        for (l, h, f) in &diag.heads {
            csv.push_str(&format!("{l},{h},{f:.4}\n"));
        }
        ctx.write(&dir.join("carry_alignment.csv"), csv.as_bytes())?;
        if let Some((l, h, f)) = diag.best() {
            println!("carry alignment over {} digits: best head l{l} h{h} at {f:.3}", diag.digits);
        }
    }
    Ok(())
}
