//! Balanced, isolated, method-fair corpora.
//!
//! Sampling produces meta triplets `(A, op, B)` once; every method rendering
//! is expanded from the same triplets, so methods only ever differ in
//! format. The maximum operand digit count is spread evenly over the digit
//! range, and no unordered operand pair `{A, B}` occurs twice anywhere in
//! train or test, whatever the operation.

mod corpus;

pub use corpus::{
    load_manifest, load_records, render_corpus, validate_manifest, CorpusDefect, CorpusRecord, DatasetManifest, FileEntry, MethodPlan,
    PlanEntry, ValidationReport, MANIFEST_FILE,
};

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::numeral::Numeral;
use crate::tracegen::{OpKind, Problem};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("invalid split spec: {0}")]
    InvalidSpec(String),
    #[error("could not find {needed} distinct operand pairs for {op} with {digits} max digits after {attempts} draws")]
    Exhaustion { op: OpKind, digits: usize, needed: usize, attempts: usize },
    #[error("no manifest at {0}")]
    ManifestMissing(String),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}: {reason}")]
    Malformed { path: String, reason: String },
    #[error("cannot render {op} for triplet {id} with {method}: {reason}")]
    Render { id: u64, op: OpKind, method: String, reason: String },
}

impl DatasetError {
    pub(crate) fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        DatasetError::Io { path: path.display().to_string(), source }
    }
}

/// The sampling seed shared by every method rendering.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MetaTriplet {
    pub id: u64,
    pub a: Numeral,
    pub op: OpKind,
    pub b: Numeral,
}

impl MetaTriplet {
    pub fn new(a: Numeral, op: OpKind, b: Numeral) -> Self {
        MetaTriplet { id: triplet_id(&a, op, &b), a, op, b }
    }

    pub fn problem(&self) -> Problem {
        Problem::new(self.a.clone(), self.op, self.b.clone())
    }

    pub fn max_digits(&self) -> usize {
        self.a.digit_count().max(self.b.digit_count())
    }

    /// Unordered operand pair, the isolation key.
    pub fn pair_key(&self) -> (String, String) {
        pair_key(&self.a, &self.b)
    }
}

pub fn pair_key(a: &Numeral, b: &Numeral) -> (String, String) {
    let (x, y) = (a.to_string(), b.to_string());
    if (x.len(), &x) <= (y.len(), &y) {
        (x, y)
    } else {
        (y, x)
    }
}

/// First eight bytes (little-endian) of SHA-256 over `A op B` in
/// conventional notation.
pub fn triplet_id(a: &Numeral, op: OpKind, b: &Numeral) -> u64 {
    let digest = Sha256::digest(format!("{a}{}{b}", op.symbol()).as_bytes());
    u64::from_le_bytes(digest[..8].try_into().unwrap())
}

/// How the operand that is not pinned to the bucket width is drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OperandMode {
    /// Its digit count is uniform in `[1, d]`.
    #[default]
    Balanced,
    /// It also has exactly `d` digits.
    Equal,
}

impl FromStr for OperandMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "balanced" => Ok(OperandMode::Balanced),
            "equal" => Ok(OperandMode::Equal),
            other => Err(format!("unknown operand mode {other:?} (expected balanced or equal)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub per_op_train: usize,
    pub per_op_test: usize,
    pub digit_lo: usize,
    pub digit_hi: usize,
    pub seed: u64,
    pub ops: Vec<OpKind>,
    #[serde(default)]
    pub operand_mode: OperandMode,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            per_op_train: 5000,
            per_op_test: 1000,
            digit_lo: 5,
            digit_hi: 12,
            seed: 0,
            ops: OpKind::ALL.to_vec(),
            operand_mode: OperandMode::Balanced,
        }
    }
}

impl SplitSpec {
    pub fn bucket_count(&self) -> usize {
        self.digit_hi + 1 - self.digit_lo
    }

    pub fn buckets(&self) -> std::ops::RangeInclusive<usize> {
        self.digit_lo..=self.digit_hi
    }

    pub fn train_quota(&self) -> usize {
        self.per_op_train / self.bucket_count()
    }

    pub fn test_quota(&self) -> usize {
        self.per_op_test / self.bucket_count()
    }

    pub fn validate(&self) -> Result<(), DatasetError> {
        let bad = |m: String| Err(DatasetError::InvalidSpec(m));
        if self.digit_lo == 0 || self.digit_lo > self.digit_hi {
            return bad(format!("digit range [{}, {}] is empty or starts at 0", self.digit_lo, self.digit_hi));
        }
        let nb = self.bucket_count();
        if !self.per_op_train.is_multiple_of(nb) || !self.per_op_test.is_multiple_of(nb) {
            return bad(format!(
                "{nb} digit buckets must divide per_op_train ({}) and per_op_test ({})",
                self.per_op_train, self.per_op_test
            ));
        }
        if self.ops.is_empty() {
            return bad("no operations selected".into());
        }
        let mut seen = HashSet::new();
        if !self.ops.iter().all(|op| seen.insert(*op)) {
            return bad("operations listed twice".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct MetaSplit {
    pub train: Vec<MetaTriplet>,
    pub test: Vec<MetaTriplet>,
}

fn cell_rng(seed: u64, op: OpKind, digits: usize) -> ChaCha8Rng {
    let digest = Sha256::digest(format!("cell:{seed}:{}:{digits}", op.tag()).as_bytes());
    ChaCha8Rng::from_seed(digest.into())
}

/// Uniform over numbers with exactly `digits` digits (0 counts as one digit).
fn sample_with_digits(rng: &mut impl Rng, digits: usize) -> Numeral {
    if digits == 1 {
        return Numeral::from_u64(rng.random_range(0..10));
    }
    let mut ds: Vec<u8> = (0..digits - 1).map(|_| rng.random_range(0..10)).collect();
    ds.push(rng.random_range(1..10));
    Numeral::from_le_digits(false, ds)
}

/// Draws the meta triplets for every `(op, bucket)` cell.
///
/// Cells are visited in a fixed order, each from its own seeded stream, and
/// every candidate passes through one deduplicating set, so the result is a
/// pure function of `spec`. Both splits come back sorted by id.
pub fn sample_meta(spec: &SplitSpec) -> Result<MetaSplit, DatasetError> {
    spec.validate()?;
    let (train_quota, test_quota) = (spec.train_quota(), spec.test_quota());
    let mut seen: HashSet<(String, String)> = HashSet::new();
    let mut split = MetaSplit::default();
    for &op in &spec.ops {
        for d in spec.buckets() {
            let mut rng = cell_rng(spec.seed, op, d);
            let needed = train_quota + test_quota;
            let limit = needed * 64 + 4096;
            let mut cell = Vec::with_capacity(needed);
            let mut attempts = 0;
            while cell.len() < needed {
                if attempts == limit {
                    return Err(DatasetError::Exhaustion { op, digits: d, needed, attempts });
                }
                attempts += 1;
                let pinned = sample_with_digits(&mut rng, d);
                let other_digits = match spec.operand_mode {
                    OperandMode::Balanced => rng.random_range(1..=d),
                    OperandMode::Equal => d,
                };
                let other = sample_with_digits(&mut rng, other_digits);
                let (a, b) = if rng.random_bool(0.5) { (pinned, other) } else { (other, pinned) };
                let t = MetaTriplet::new(a, op, b);
                if seen.insert(t.pair_key()) {
                    cell.push(t);
                }
            }
            let test = cell.split_off(train_quota);
            split.train.extend(cell);
            split.test.extend(test);
        }
    }
    split.train.sort_by_key(|t| t.id);
    split.test.sort_by_key(|t| t.id);
    Ok(split)
}

impl fmt::Display for MetaTriplet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{:016x} {} {} {}", self.id, self.a, self.op.symbol(), self.b)
    }
}
