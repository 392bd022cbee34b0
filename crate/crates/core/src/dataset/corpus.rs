//! JSONL rendering of meta triplets and manifest validation.
//!
//! Layout of a corpus directory:
//!
//! ```text
//! manifest.json
//! <plan>/train.jsonl
//! <plan>/test.jsonl
//! ```

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{pair_key, triplet_id, DatasetError, MetaSplit, MetaTriplet, SplitSpec};
use crate::fsutil::{sha256_hex, write_atomic};
use crate::numeral::Numeral;
use crate::tracegen::{generate, MethodVariant, OpKind, Problem};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const FORMAT_VERSION: u32 = 1;
const SPLITS: [&str; 2] = ["train", "test"];

/// One line of a corpus file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusRecord {
    pub id: u64,
    pub op: OpKind,
    /// Conventional (big-endian) decimal.
    pub a: String,
    pub b: String,
    pub method: String,
    pub prompt: String,
    pub target: String,
    pub max_digits: usize,
}

impl CorpusRecord {
    pub fn render(t: &MetaTriplet, method: MethodVariant) -> Result<Self, DatasetError> {
        let trace = generate(&t.problem(), method).map_err(|e| DatasetError::Render {
            id: t.id,
            op: t.op,
            method: method.tag(),
            reason: e.to_string(),
        })?;
        Ok(CorpusRecord {
            id: t.id,
            op: t.op,
            a: t.a.to_string(),
            b: t.b.to_string(),
            method: method.tag(),
            target: trace.target(),
            prompt: trace.prompt,
            max_digits: t.max_digits(),
        })
    }

    /// Recovers the problem, parsing operands strictly.
    pub fn problem(&self) -> Result<Problem, String> {
        let a: Numeral = self.a.parse().map_err(|e| format!("operand a: {e}"))?;
        let b: Numeral = self.b.parse().map_err(|e| format!("operand b: {e}"))?;
        Ok(Problem::new(a, self.op, b))
    }

    pub fn method_variant(&self) -> Result<MethodVariant, String> {
        self.method.parse()
    }

    pub fn text(&self) -> String {
        format!("{}{}", self.prompt, self.target)
    }
}

/// Which format each operation is rendered in.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MethodPlan {
    pub name: String,
    pub methods: BTreeMap<OpKind, MethodVariant>,
}

impl MethodPlan {
    pub fn uniform(name: &str, method: MethodVariant) -> Self {
        MethodPlan { name: name.to_string(), methods: OpKind::ALL.iter().map(|&op| (op, method)).collect() }
    }

    /// Direct little-endian addition and subtraction, little-endian
    /// step-by-step multiplication.
    pub fn left() -> Self {
        let mut plan = MethodPlan::uniform("left", MethodVariant::LE_DIRECT);
        plan.methods.insert(OpKind::Mul, MethodVariant::LE_STEP);
        plan
    }

    pub fn builtin() -> Vec<MethodPlan> {
        vec![
            MethodPlan::left(),
            MethodPlan::uniform("le-direct", MethodVariant::LE_DIRECT),
            MethodPlan::uniform("be-direct", MethodVariant::BE_DIRECT),
            MethodPlan::uniform("le-step", MethodVariant::LE_STEP),
            MethodPlan::uniform("be-step", MethodVariant::BE_STEP),
        ]
    }

    pub fn method(&self, op: OpKind) -> MethodVariant {
        self.methods[&op]
    }
}

impl FromStr for MethodPlan {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        MethodPlan::builtin()
            .into_iter()
            .find(|p| p.name == s)
            .ok_or_else(|| format!("unknown method plan {s:?} (expected left, le-direct, be-direct, le-step or be-step)"))
    }
}

impl fmt::Display for MethodPlan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanEntry {
    pub name: String,
    pub methods: BTreeMap<OpKind, MethodVariant>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileEntry {
    pub path: String,
    pub plan: String,
    pub split: String,
    pub records: usize,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub seed: u64,
    pub spec: SplitSpec,
    pub plans: Vec<PlanEntry>,
    /// split -> op -> max-digit bucket -> triplets
    pub counts: BTreeMap<String, BTreeMap<OpKind, BTreeMap<usize, usize>>>,
    pub files: Vec<FileEntry>,
    /// How training consumes the per-operation records.
    pub batching: String,
}

impl DatasetManifest {
    pub fn plan(&self, name: &str) -> Option<MethodPlan> {
        self.plans.iter().find(|p| p.name == name).map(|p| MethodPlan { name: p.name.clone(), methods: p.methods.clone() })
    }
}

fn counts_of(ts: &[MetaTriplet]) -> BTreeMap<OpKind, BTreeMap<usize, usize>> {
    let mut m: BTreeMap<OpKind, BTreeMap<usize, usize>> = BTreeMap::new();
    for t in ts {
        *m.entry(t.op).or_default().entry(t.max_digits()).or_default() += 1;
    }
    m
}

fn to_jsonl(records: &[CorpusRecord]) -> Vec<u8> {
    let mut out = Vec::new();
    for r in records {
        serde_json::to_writer(&mut out, r).expect("records serialize");
        out.push(b'\n');
    }
    out
}

/// Writes one JSONL pair per plan plus the manifest. Records keep the meta
/// order (sorted by id), so output bytes are a pure function of the inputs.
pub fn render_corpus(
    spec: &SplitSpec,
    meta: &MetaSplit,
    plans: &[MethodPlan],
    out_dir: &Path,
) -> Result<DatasetManifest, DatasetError> {
    let mut files = Vec::new();
    for plan in plans {
        for (split, triplets) in SPLITS.iter().zip([&meta.train, &meta.test]) {
            let records = triplets
                .iter()
                .map(|t| CorpusRecord::render(t, plan.method(t.op)))
                .collect::<Result<Vec<_>, _>>()?;
            let bytes = to_jsonl(&records);
            let rel = format!("{}/{split}.jsonl", plan.name);
            let path = out_dir.join(&rel);
            write_atomic(&path, &bytes).map_err(|e| DatasetError::io(&path, e))?;
            files.push(FileEntry {
                path: rel,
                plan: plan.name.clone(),
                split: split.to_string(),
                records: records.len(),
                sha256: sha256_hex(&bytes),
            });
        }
    }
    let manifest = DatasetManifest {
        format_version: FORMAT_VERSION,
        seed: spec.seed,
        spec: spec.clone(),
        plans: plans.iter().map(|p| PlanEntry { name: p.name.clone(), methods: p.methods.clone() }).collect(),
        counts: BTreeMap::from([
            ("train".to_string(), counts_of(&meta.train)),
            ("test".to_string(), counts_of(&meta.test)),
        ]),
        files,
        batching: "operations shuffled jointly each epoch under the run seed".to_string(),
    };
    let path = out_dir.join(MANIFEST_FILE);
    let mut bytes = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
    bytes.push(b'\n');
    write_atomic(&path, &bytes).map_err(|e| DatasetError::io(&path, e))?;
    Ok(manifest)
}

pub fn load_records(path: &Path) -> Result<Vec<CorpusRecord>, DatasetError> {
    let text = fs::read_to_string(path).map_err(|e| DatasetError::io(path, e))?;
    text.lines()
        .enumerate()
        .map(|(i, line)| {
            serde_json::from_str(line).map_err(|e| DatasetError::Malformed {
                path: path.display().to_string(),
                reason: format!("line {}: {e}", i + 1),
            })
        })
        .collect()
}

pub fn load_manifest(dir: &Path) -> Result<DatasetManifest, DatasetError> {
    let path = dir.join(MANIFEST_FILE);
    if !path.is_file() {
        return Err(DatasetError::ManifestMissing(path.display().to_string()));
    }
    let bytes = fs::read(&path).map_err(|e| DatasetError::io(&path, e))?;
    serde_json::from_slice(&bytes)
        .map_err(|e| DatasetError::Malformed { path: path.display().to_string(), reason: e.to_string() })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "kind")]
pub enum CorpusDefect {
    DigestMismatch { path: String, expected: String, found: String },
    MissingFile { path: String },
    MalformedRecord { path: String, line: usize, reason: String },
    /// Record content disagrees with its own triplet or the plan.
    RecordMismatch { path: String, line: usize, id: u64, reason: String },
    BalanceViolation { plan: String, split: String, op: OpKind, bucket: usize, expected: usize, found: usize },
    IsolationViolation { plan: String, id: u64, clashes_with: u64 },
    FairnessViolation { plan: String, reference: String },
}

impl fmt::Display for CorpusDefect {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CorpusDefect::DigestMismatch { path, expected, found } => {
                write!(f, "DigestMismatch {path}: manifest {expected}, file {found}")
            }
            CorpusDefect::MissingFile { path } => write!(f, "MissingFile {path}"),
            CorpusDefect::MalformedRecord { path, line, reason } => write!(f, "MalformedRecord {path}:{line}: {reason}"),
            CorpusDefect::RecordMismatch { path, line, id, reason } => {
                write!(f, "RecordMismatch {path}:{line} id {id}: {reason}")
            }
            CorpusDefect::BalanceViolation { plan, split, op, bucket, expected, found } => {
                write!(f, "BalanceViolation {plan}/{split} {op} max_digits={bucket}: expected {expected}, found {found}")
            }
            CorpusDefect::IsolationViolation { plan, id, clashes_with } => {
                write!(f, "IsolationViolation {plan}: id {id} repeats the operand pair of id {clashes_with}")
            }
            CorpusDefect::FairnessViolation { plan, reference } => {
                write!(f, "FairnessViolation {plan}: triplets differ from {reference}")
            }
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ValidationReport {
    pub defects: Vec<CorpusDefect>,
    pub records_checked: usize,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.defects.is_empty()
    }
}

type Projection = Vec<(String, u64, String, OpKind, String)>;

/// Re-checks digests, per-cell balance, pair isolation, method fairness
/// and every record against a fresh rendering of its triplet.
pub fn validate_manifest(dir: &Path) -> Result<ValidationReport, DatasetError> {
    let manifest = load_manifest(dir)?;
    let mut report = ValidationReport::default();
    let spec = &manifest.spec;
    let mut projections: Vec<(String, Projection)> = Vec::new();

    for plan_entry in &manifest.plans {
        let plan = manifest.plan(&plan_entry.name).unwrap();
        let mut pairs: HashMap<(String, String), u64> = HashMap::new();
        let mut projection: Projection = Vec::new();
        for split in SPLITS {
            let Some(entry) = manifest.files.iter().find(|f| f.plan == plan.name && f.split == split) else {
                report.defects.push(CorpusDefect::MissingFile { path: format!("{}/{split}.jsonl", plan.name) });
                continue;
            };
            let path = dir.join(&entry.path);
            let Ok(bytes) = fs::read(&path) else {
                report.defects.push(CorpusDefect::MissingFile { path: entry.path.clone() });
                continue;
            };
            let digest = sha256_hex(&bytes);
            if digest != entry.sha256 {
                report.defects.push(CorpusDefect::DigestMismatch {
                    path: entry.path.clone(),
                    expected: entry.sha256.clone(),
                    found: digest,
                });
            }
            let mut cells: BTreeMap<(OpKind, usize), usize> = BTreeMap::new();
            for (i, line) in String::from_utf8_lossy(&bytes).lines().enumerate() {
                let line_no = i + 1;
                report.records_checked += 1;
                let record: CorpusRecord = match serde_json::from_str(line) {
                    Ok(r) => r,
                    Err(e) => {
                        report.defects.push(CorpusDefect::MalformedRecord {
                            path: entry.path.clone(),
                            line: line_no,
                            reason: e.to_string(),
                        });
                        continue;
                    }
                };
                if let Err(reason) = check_record(&record, &plan) {
                    report.defects.push(CorpusDefect::RecordMismatch {
                        path: entry.path.clone(),
                        line: line_no,
                        id: record.id,
                        reason,
                    });
                }
                *cells.entry((record.op, record.max_digits)).or_default() += 1;
                if let (Ok(a), Ok(b)) = (record.a.parse::<Numeral>(), record.b.parse::<Numeral>()) {
                    let key = pair_key(&a, &b);
                    if let Some(&first) = pairs.get(&key) {
                        report.defects.push(CorpusDefect::IsolationViolation {
                            plan: plan.name.clone(),
                            id: record.id,
                            clashes_with: first,
                        });
                    } else {
                        pairs.insert(key, record.id);
                    }
                }
                projection.push((split.to_string(), record.id, record.a.clone(), record.op, record.b.clone()));
            }
            let quota = if split == "train" { spec.train_quota() } else { spec.test_quota() };
            for &op in &spec.ops {
                for bucket in spec.buckets() {
                    let found = cells.remove(&(op, bucket)).unwrap_or(0);
                    if found != quota {
                        report.defects.push(CorpusDefect::BalanceViolation {
                            plan: plan.name.clone(),
                            split: split.to_string(),
                            op,
                            bucket,
                            expected: quota,
                            found,
                        });
                    }
                }
            }
            for ((op, bucket), found) in cells {
                report.defects.push(CorpusDefect::BalanceViolation {
                    plan: plan.name.clone(),
                    split: split.to_string(),
                    op,
                    bucket,
                    expected: 0,
                    found,
                });
            }
        }
        projection.sort();
        projections.push((plan.name.clone(), projection));
    }

    if let Some(((reference, first), rest)) = projections.split_first().map(|(f, r)| ((&f.0, &f.1), r)) {
        for (name, projection) in rest {
            if projection != first {
                report.defects.push(CorpusDefect::FairnessViolation { plan: name.clone(), reference: reference.clone() });
            }
        }
    }
    Ok(report)
}

fn check_record(record: &CorpusRecord, plan: &MethodPlan) -> Result<(), String> {
    let problem = record.problem()?;
    let meta = MetaTriplet::new(problem.a, problem.op, problem.b);
    if meta.id != triplet_id(&meta.a, meta.op, &meta.b) || meta.id != record.id {
        return Err(format!("id does not hash (a, op, b); expected {}", meta.id));
    }
    if record.max_digits != meta.max_digits() {
        return Err(format!("max_digits {} but operands have {}", record.max_digits, meta.max_digits()));
    }
    let Some(&method) = plan.methods.get(&record.op) else {
        return Err(format!("plan {} has no method for {}", plan.name, record.op));
    };
    let fresh = CorpusRecord::render(&meta, method).map_err(|e| e.to_string())?;
    if &fresh != record {
        return Err("prompt, target or method differ from a fresh rendering".to_string());
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::sample_meta;

    fn small_spec() -> SplitSpec {
        SplitSpec { per_op_train: 16, per_op_test: 8, seed: 3, ..SplitSpec::default() }
    }

    fn build(dir: &Path) -> DatasetManifest {
        let spec = small_spec();
        let meta = sample_meta(&spec).unwrap();
        render_corpus(&spec, &meta, &MethodPlan::builtin(), dir).unwrap()
    }

    #[test]
    fn record_rendering() {
        let t = MetaTriplet::new(Numeral::from_u64(17), OpKind::Add, Numeral::from_u64(25));
        let r = CorpusRecord::render(&t, MethodVariant::LE_DIRECT).unwrap();
        assert_eq!((r.prompt.as_str(), r.target.as_str()), ("71+52=", "24"));
        assert_eq!(r.method, "le-direct");
        let t = MetaTriplet::new(Numeral::from_u64(23), OpKind::Mul, Numeral::from_u64(45));
        let r = CorpusRecord::render(&t, MethodPlan::left().method(OpKind::Mul)).unwrap();
        assert_eq!(
            r.text(),
            "32*54=S0: 3*54 = 531 ; 0 + 531 = 531 ; fix 5 ; low 5\nS1: 2*54 = 09 ; 31 + 09 = 301 ; fix 3 ; low 53\nA: 5301;;"
        );
        let json = serde_json::to_string(&r).unwrap();
        assert!(json.starts_with(&format!("{{\"id\":{},\"op\":\"mul\",\"a\":\"23\",\"b\":\"45\"", t.id)));
    }

    #[test]
    fn fresh_corpus_validates() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = build(dir.path());
        assert_eq!(manifest.files.len(), 10);
        let report = validate_manifest(dir.path()).unwrap();
        assert!(report.is_clean(), "{:?}", report.defects);
        assert_eq!(report.records_checked, 5 * 72);
    }

    #[test]
    fn plans_share_ids() {
        let dir = tempfile::tempdir().unwrap();
        build(dir.path());
        let ids = |plan: &str| {
            let mut v: Vec<u64> = load_records(&dir.path().join(plan).join("train.jsonl")).unwrap().iter().map(|r| r.id).collect();
            v.sort();
            v
        };
        assert_eq!(ids("left"), ids("be-direct"));
    }

    #[test]
    fn copied_pair_is_isolation_violation() {
        let dir = tempfile::tempdir().unwrap();
        build(dir.path());
        let test = fs::read_to_string(dir.path().join("left/test.jsonl")).unwrap();
        let line = test.lines().next().unwrap();
        let id = serde_json::from_str::<CorpusRecord>(line).unwrap().id;
        let train_path = dir.path().join("left/train.jsonl");
        let mut train = fs::read_to_string(&train_path).unwrap();
        train.push_str(line);
        train.push('\n');
        fs::write(&train_path, train).unwrap();
        let report = validate_manifest(dir.path()).unwrap();
        assert!(report
            .defects
            .iter()
            .any(|d| matches!(d, CorpusDefect::IsolationViolation { id: i, .. } | CorpusDefect::IsolationViolation { clashes_with: i, .. } if *i == id)));
        assert!(report.defects.iter().any(|d| matches!(d, CorpusDefect::DigestMismatch { .. })));
    }

    #[test]
    fn deleted_record_is_balance_violation() {
        let dir = tempfile::tempdir().unwrap();
        build(dir.path());
        let path = dir.path().join("be-step/train.jsonl");
        let text = fs::read_to_string(&path).unwrap();
        let (first, rest) = text.split_once('\n').unwrap();
        let removed: CorpusRecord = serde_json::from_str(first).unwrap();
        fs::write(&path, rest).unwrap();
        let report = validate_manifest(dir.path()).unwrap();
        assert!(report.defects.contains(&CorpusDefect::BalanceViolation {
            plan: "be-step".into(),
            split: "train".into(),
            op: removed.op,
            bucket: removed.max_digits,
            expected: 2,
            found: 1,
        }));
        assert!(report.defects.iter().any(|d| matches!(d, CorpusDefect::FairnessViolation { .. })));
    }

    #[test]
    fn edited_target_is_record_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        build(dir.path());
        let path = dir.path().join("left/test.jsonl");
        let mut records = load_records(&path).unwrap();
        records[0].target.push('0');
        fs::write(&path, to_jsonl(&records)).unwrap();
        let report = validate_manifest(dir.path()).unwrap();
        assert!(report.defects.iter().any(|d| matches!(d, CorpusDefect::RecordMismatch { line: 1, .. })));
    }

    #[test]
    fn missing_manifest() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(validate_manifest(dir.path()), Err(DatasetError::ManifestMissing(_))));
    }

    #[test]
    fn rendering_is_byte_deterministic() {
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let (ma, mb) = (build(a.path()), build(b.path()));
        assert_eq!(ma, mb);
        assert_eq!(fs::read(a.path().join(MANIFEST_FILE)).unwrap(), fs::read(b.path().join(MANIFEST_FILE)).unwrap());
    }
}
