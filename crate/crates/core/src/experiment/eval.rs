//! Exact-match scoring, error taxonomy and per-digit breakdown.

use std::collections::BTreeMap;
use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::CorpusRecord;
use crate::model::{generate_batch, ModelError, Parameters};
use crate::numeral::Endianness;
use crate::tokenizer::{TokenId, Vocabulary};
use crate::tracegen::{audit_target, extract_answer, DefectKind, MethodVariant, OpKind, Problem};

/// One evaluated test example. Numerals are big-endian regardless of the
/// method the model was trained on.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transcript {
    pub id: u64,
    pub op: OpKind,
    pub a: String,
    pub b: String,
    pub max_digits: usize,
    pub method: String,
    pub prompt: String,
    /// Decoded model output after the prompt, EOS excluded.
    pub output: String,
    pub answer: Option<String>,
    pub expected: String,
    pub correct: bool,
}

impl Transcript {
    pub fn problem(&self) -> Problem {
        let parse = |s: &str| s.parse().expect("transcript numerals are well formed");
        Problem::new(parse(&self.a), self.op, parse(&self.b))
    }

    pub fn method_variant(&self) -> MethodVariant {
        self.method.parse().expect("transcript method is a known tag")
    }

    pub fn is_parseable(&self) -> bool {
        self.answer.is_some()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Evaluation {
    pub transcripts: Vec<Transcript>,
}

impl Evaluation {
    fn acc_of<'a>(items: impl Iterator<Item = &'a Transcript>) -> Option<f64> {
        let (mut n, mut ok) = (0usize, 0usize);
        for t in items {
            n += 1;
            ok += t.correct as usize;
        }
        (n > 0).then(|| ok as f64 / n as f64)
    }

    /// Exact-match accuracy over every transcript; `None` if empty.
    pub fn acc(&self) -> Option<f64> {
        Self::acc_of(self.transcripts.iter())
    }

    pub fn acc_op(&self, op: OpKind) -> Option<f64> {
        Self::acc_of(self.transcripts.iter().filter(|t| t.op == op))
    }

    pub fn acc_bucket(&self, digits: usize) -> Option<f64> {
        Self::acc_of(self.transcripts.iter().filter(|t| t.max_digits == digits))
    }
}

/// Scores raw target-side outputs against their records.
pub fn score_outputs(records: &[CorpusRecord], outputs: &[String]) -> Evaluation {
    assert_eq!(records.len(), outputs.len(), "one output per record");
    let transcripts = records
        .iter()
        .zip(outputs)
        .map(|(r, out)| {
            let method = r.method_variant().expect("record method is a known tag");
            let problem = r.problem().expect("record numerals are well formed");
            let expected = problem.oracle();
            let answer = extract_answer(out, method);
            Transcript {
                id: r.id,
                op: r.op,
                a: r.a.clone(),
                b: r.b.clone(),
                max_digits: r.max_digits,
                method: r.method.clone(),
                prompt: r.prompt.clone(),
                output: out.clone(),
                correct: answer.as_ref() == Some(&expected),
                answer: answer.map(|n| n.render(Endianness::Big)),
                expected: expected.render(Endianness::Big),
            }
        })
        .collect();
    Evaluation { transcripts }
}

/// Examples decoded together; fixed so results do not depend on the
/// worker count.
pub const EVAL_CHUNK: usize = 64;

fn decode_lossy(vocab: &Vocabulary, ids: &[TokenId]) -> String {
    vocab.decode(ids).unwrap_or_else(|_| ids.iter().map(|&id| vocab.label(id)).collect())
}

/// Greedy-decodes every record's prompt and scores the result. Runs on the
/// current rayon pool.
pub fn evaluate(
    params: &Parameters<f32>,
    vocab: &Vocabulary,
    records: &[CorpusRecord],
    max_new: usize,
) -> Result<Evaluation, ModelError> {
    let prompts: Vec<Vec<TokenId>> = records
        .iter()
        .map(|r| vocab.encode(&r.prompt).map_err(|e| ModelError::InvalidConfig(format!("record {}: {e}", r.id))))
        .collect::<Result<_, _>>()?;
    // sort by prompt length so chunks decode as few groups as possible
    let mut order: Vec<usize> = (0..records.len()).collect();
    order.sort_by_key(|&i| (prompts[i].len(), i));
    let chunks: Vec<&[usize]> = order.chunks(EVAL_CHUNK).collect();
    let decoded: Vec<Vec<(usize, String)>> = chunks
        .par_iter()
        .map(|idx| {
            let batch: Vec<Vec<TokenId>> = idx.iter().map(|&i| prompts[i].clone()).collect();
            let outs = generate_batch(params, &batch, max_new)?;
            Ok(idx.iter().zip(outs).map(|(&i, ids)| (i, decode_lossy(vocab, &ids))).collect())
        })
        .collect::<Result<_, ModelError>>()?;
    let mut outputs = vec![String::new(); records.len()];
    for (i, s) in decoded.into_iter().flatten() {
        outputs[i] = s;
    }
    Ok(score_outputs(records, &outputs))
}

/// Where a model output first goes wrong. Step indices match the `S{i}`
/// labels of the trace.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ErrorClass {
    ProductStep(usize),
    SumStep(usize),
    AnswerOnly,
    Formatting,
    Correct,
}

impl ErrorClass {
    pub fn name(&self) -> &'static str {
        match self {
            ErrorClass::ProductStep(_) => "product_step",
            ErrorClass::SumStep(_) => "sum_step",
            ErrorClass::AnswerOnly => "answer_only",
            ErrorClass::Formatting => "formatting",
            ErrorClass::Correct => "correct",
        }
    }

    pub fn step(&self) -> Option<usize> {
        match self {
            ErrorClass::ProductStep(i) | ErrorClass::SumStep(i) => Some(*i),
            _ => None,
        }
    }
}

impl fmt::Display for ErrorClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.step() {
            Some(i) => write!(f, "{}({i})", self.name()),
            None => f.write_str(self.name()),
        }
    }
}

/// Classifies `output` (the text after the prompt) by its first defect in
/// decode order. Column-step defects of add/sub traces count as sum steps.
pub fn classify_error(output: &str, problem: &Problem, method: MethodVariant) -> ErrorClass {
    let audit = audit_target(problem, method, output);
    match audit.first_defect() {
        Some(d) => match (d.kind, d.step) {
            (DefectKind::Product, Some(i)) => ErrorClass::ProductStep(i),
            (DefectKind::Sum | DefectKind::Column, Some(i)) => ErrorClass::SumStep(i),
            (DefectKind::StepCount, _) => ErrorClass::Formatting,
            _ => ErrorClass::AnswerOnly,
        },
        None if audit.parse_error.is_some() => ErrorClass::Formatting,
        None if audit.report.answer_correct => ErrorClass::Correct,
        None => ErrorClass::AnswerOnly,
    }
}

pub fn classify_transcript(t: &Transcript) -> ErrorClass {
    classify_error(&t.output, &t.problem(), t.method_variant())
}

/// `id,class,step_index` rows for every transcript.
pub fn taxonomy_csv(transcripts: &[Transcript]) -> String {
    let mut out = String::from("id,class,step_index\n");
    for t in transcripts {
        let class = classify_transcript(t);
        let step = class.step().map(|i| i.to_string()).unwrap_or_default();
        out.push_str(&format!("{},{},{}\n", t.id, class.name(), step));
    }
    out
}

/// Counts of each class; steps are folded into their class name.
pub fn taxonomy_summary(transcripts: &[Transcript]) -> BTreeMap<&'static str, usize> {
    let mut out = BTreeMap::new();
    for t in transcripts {
        *out.entry(classify_transcript(t).name()).or_default() += 1;
    }
    out
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct DigitCell {
    pub total: usize,
    pub correct: usize,
    pub wrong_parseable: usize,
    pub unparseable: usize,
}

impl DigitCell {
    pub fn acc(&self) -> Option<f64> {
        (self.total > 0).then(|| self.correct as f64 / self.total as f64)
    }
}

/// Accuracy per op and max-digit bucket. Buckets without examples stay
/// absent rather than reading as zero.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DigitTable {
    pub buckets: Vec<usize>,
    pub cells: BTreeMap<OpKind, BTreeMap<usize, DigitCell>>,
}

impl DigitTable {
    pub fn cell(&self, op: OpKind, digits: usize) -> Option<&DigitCell> {
        self.cells.get(&op)?.get(&digits)
    }

    pub fn acc(&self, op: OpKind, digits: usize) -> Option<f64> {
        self.cell(op, digits).and_then(DigitCell::acc)
    }

    /// CSV with one row per op and one `d{n}` column per bucket; absent
    /// cells are `-`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("op");
        for d in &self.buckets {
            out.push_str(&format!(",d{d}"));
        }
        out.push('\n');
        for op in OpKind::ALL {
            out.push_str(op.tag());
            for &d in &self.buckets {
                match self.acc(op, d) {
                    Some(v) => out.push_str(&format!(",{:.1}", v * 100.0)),
                    None => out.push_str(",-"),
                }
            }
            out.push('\n');
        }
        out
    }
}

/// Per-cell accuracy over `buckets`; transcripts outside them are ignored.
pub fn digit_breakdown(transcripts: &[Transcript], buckets: impl IntoIterator<Item = usize>) -> DigitTable {
    let buckets: Vec<usize> = buckets.into_iter().collect();
    let mut cells: BTreeMap<OpKind, BTreeMap<usize, DigitCell>> = BTreeMap::new();
    for t in transcripts.iter().filter(|t| buckets.contains(&t.max_digits)) {
        let cell = cells.entry(t.op).or_default().entry(t.max_digits).or_default();
        cell.total += 1;
        if t.correct {
            cell.correct += 1;
        } else if t.is_parseable() {
            cell.wrong_parseable += 1;
        } else {
            cell.unparseable += 1;
        }
    }
    DigitTable { buckets, cells }
}

/// Longest target in tokens plus EOS slack: the decode budget for `records`.
pub fn decode_budget(records: &[CorpusRecord]) -> usize {
    records.iter().map(|r| r.target.chars().count()).max().unwrap_or(0) + 2
}
