//! Compiles `(A, op, B)` problems into training text and checks such text
//! against exact arithmetic.
//!
//! Target layouts (everything after the prompt `A{op}B=`):
//!
//! * direct: the answer numeral alone, e.g. `71+52=` followed by `24`;
//! * step-by-step multiplication, one line per digit of `A`:
//!   `S{i}: {a_i}*{B} = {p} ; {Uhigh_before} + {p} = {Uhigh_after} ; fix {d} ; low {Ulow}`
//!   then `A: {answer};;`;
//! * step-by-step addition/subtraction, one column per line from the least
//!   significant digit: `({x}+{y}, c{cin}) → {d} c{cout}` (subtraction uses
//!   `-` and `b` for borrows and is preceded by a `+`/`-` sign line), then
//!   `A: {answer};;`.
//!
//! Every numeral in a trace is rendered with the method's endianness.

mod audit;

pub use audit::{
    audit_target, extract_answer, parse_prompt, verify_trace, Audit, Defect, DefectKind, StepCheck, TraceParseError,
    VerificationReport,
};

use std::fmt;
use std::str::FromStr;

use num_bigint::BigInt;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numeral::{digits, Endianness, Numeral};

/// Ends every step-by-step target.
pub const TERMINATOR: &str = ";;";
/// Prefix of the answer line in step-by-step targets.
pub const ANSWER_PREFIX: &str = "A: ";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OpKind {
    Add,
    Sub,
    Mul,
}

impl OpKind {
    pub const ALL: [OpKind; 3] = [OpKind::Add, OpKind::Sub, OpKind::Mul];

    pub fn symbol(self) -> char {
        match self {
            OpKind::Add => '+',
            OpKind::Sub => '-',
            OpKind::Mul => '*',
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            OpKind::Add => "add",
            OpKind::Sub => "sub",
            OpKind::Mul => "mul",
        }
    }
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for OpKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "add" | "+" => Ok(OpKind::Add),
            "sub" | "-" => Ok(OpKind::Sub),
            "mul" | "*" => Ok(OpKind::Mul),
            other => Err(format!("unknown operation {other:?} (expected add, sub or mul)")),
        }
    }
}

/// One cell of the endianness x step-by-step ablation grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct MethodVariant {
    pub endianness: Endianness,
    pub step_by_step: bool,
}

impl MethodVariant {
    pub const LE_DIRECT: MethodVariant = MethodVariant { endianness: Endianness::Little, step_by_step: false };
    pub const BE_DIRECT: MethodVariant = MethodVariant { endianness: Endianness::Big, step_by_step: false };
    pub const LE_STEP: MethodVariant = MethodVariant { endianness: Endianness::Little, step_by_step: true };
    pub const BE_STEP: MethodVariant = MethodVariant { endianness: Endianness::Big, step_by_step: true };

    /// Little-endian multiplication without steps does not learn at small
    /// data scale; it is kept for ablations only.
    pub fn known_hard_for(self, op: OpKind) -> bool {
        op == OpKind::Mul && self == MethodVariant::LE_DIRECT
    }

    pub fn tag(self) -> String {
        format!("{}-{}", self.endianness.tag(), if self.step_by_step { "step" } else { "direct" })
    }
}

impl fmt::Display for MethodVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.tag())
    }
}

impl FromStr for MethodVariant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "le-direct" => Ok(MethodVariant::LE_DIRECT),
            "be-direct" => Ok(MethodVariant::BE_DIRECT),
            "le-step" => Ok(MethodVariant::LE_STEP),
            "be-step" => Ok(MethodVariant::BE_STEP),
            other => Err(format!("unknown method variant {other:?}")),
        }
    }
}

impl Serialize for MethodVariant {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.tag())
    }
}

impl<'de> Deserialize<'de> for MethodVariant {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        String::deserialize(deserializer)?.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Problem {
    pub a: Numeral,
    pub op: OpKind,
    pub b: Numeral,
}

impl Problem {
    pub fn new(a: Numeral, op: OpKind, b: Numeral) -> Self {
        Problem { a, op, b }
    }

    pub fn from_u64(a: u64, op: OpKind, b: u64) -> Self {
        Problem::new(Numeral::from_u64(a), op, Numeral::from_u64(b))
    }

    pub fn oracle(&self) -> Numeral {
        oracle_eval(&self.a, self.op, &self.b)
    }

    pub fn max_digits(&self) -> usize {
        self.a.digit_count().max(self.b.digit_count())
    }

    pub fn prompt(&self, endianness: Endianness) -> String {
        format!("{}{}{}=", self.a.render(endianness), self.op.symbol(), self.b.render(endianness))
    }
}

impl fmt::Display for Problem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {} {}", self.a, self.op.symbol(), self.b)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TraceError {
    #[error("{op} step traces require nonnegative operands, got {problem}")]
    NegativeOperand { op: OpKind, problem: String },
}

/// Ground truth, computed with a big-integer library independently of the
/// digit-level trace algorithms.
pub fn oracle_eval(a: &Numeral, op: OpKind, b: &Numeral) -> Numeral {
    let (x, y) = (a.to_integer(), b.to_integer());
    let v: BigInt = match op {
        OpKind::Add => x + y,
        OpKind::Sub => x - y,
        OpKind::Mul => x * y,
    };
    Numeral::from_integer(&v)
}

/// Training text for one problem under one method.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Trace {
    pub prompt: String,
    pub steps: Vec<String>,
    pub answer: String,
    pub answer_value: Numeral,
    pub method: MethodVariant,
    pub op: OpKind,
}

impl Trace {
    /// Everything the model must produce after the prompt (EOS excluded).
    pub fn target(&self) -> String {
        if !self.method.step_by_step {
            return self.answer.clone();
        }
        let mut out = String::new();
        for step in &self.steps {
            out.push_str(step);
            out.push('\n');
        }
        out.push_str(ANSWER_PREFIX);
        out.push_str(&self.answer);
        out.push_str(TERMINATOR);
        out
    }

    pub fn text(&self) -> String {
        format!("{}{}", self.prompt, self.target())
    }
}

/// One substep of the cumulative-sum multiplication.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MulStepRecord {
    pub index: usize,
    pub a_digit: u8,
    pub product: Numeral,
    pub u_high_before: Numeral,
    pub u_high_after: Numeral,
    pub fixed_digit: u8,
    /// Fixed low section, least significant first; may end in zeros.
    pub u_low_after: Vec<u8>,
}

impl MulStepRecord {
    pub fn render(&self, b: &Numeral, e: Endianness) -> String {
        let p = self.product.render(e);
        format!(
            "S{}: {}*{} = {p} ; {} + {p} = {} ; fix {} ; low {}",
            self.index,
            self.a_digit,
            b.render(e),
            self.u_high_before.render(e),
            self.u_high_after.render(e),
            self.fixed_digit,
            render_digit_run(&self.u_low_after, e),
        )
    }
}

/// Renders a little-endian digit run verbatim (zeros included).
pub fn render_digit_run(run: &[u8], e: Endianness) -> String {
    let ch = |d: &u8| char::from(b'0' + d);
    match e {
        Endianness::Little => run.iter().map(ch).collect(),
        Endianness::Big => run.iter().rev().map(ch).collect(),
    }
}

/// Runs the cumulative-sum decomposition: for each digit `a_i` of `a`
/// (least significant first) add `a_i * b` to the high section, then pop its
/// lowest digit into the fixed low section. Returns the step records and the
/// product.
pub fn mul_steps(a: &Numeral, b: &Numeral) -> (Vec<MulStepRecord>, Numeral) {
    let mut u_low: Vec<u8> = Vec::with_capacity(a.digit_count() + b.digit_count());
    let mut u_high = Numeral::zero();
    let mut records = Vec::with_capacity(a.digit_count());
    for (index, &a_digit) in a.digits().iter().enumerate() {
        let product = Numeral::from_le_digits(false, digits::mul_digit(b.digits(), a_digit));
        let after = Numeral::from_le_digits(false, digits::add(u_high.digits(), product.digits()));
        let fixed_digit = after.digit(0);
        u_low.push(fixed_digit);
        let rest = Numeral::from_le_digits(false, after.digits()[1..].to_vec());
        records.push(MulStepRecord {
            index,
            a_digit,
            product,
            u_high_before: u_high,
            u_high_after: after,
            fixed_digit,
            u_low_after: u_low.clone(),
        });
        u_high = rest;
    }
    let mut answer = u_low;
    if !u_high.is_zero() {
        answer.extend_from_slice(u_high.digits());
    }
    (records, Numeral::from_le_digits(false, answer))
}

/// One column of digit-wise addition or subtraction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ColumnStep {
    pub x: u8,
    pub y: u8,
    pub carry_in: u8,
    pub digit: u8,
    pub carry_out: u8,
}

impl ColumnStep {
    pub fn add(x: u8, y: u8, carry_in: u8) -> Self {
        let s = x + y + carry_in;
        ColumnStep { x, y, carry_in, digit: s % 10, carry_out: s / 10 }
    }

    pub fn sub(x: u8, y: u8, borrow_in: u8) -> Self {
        let d = x as i8 - y as i8 - borrow_in as i8;
        let (digit, carry_out) = if d < 0 { (d + 10, 1) } else { (d, 0) };
        ColumnStep { x, y, carry_in: borrow_in, digit: digit as u8, carry_out }
    }

    pub fn render(&self, op: OpKind) -> String {
        let (sym, flag) = if op == OpKind::Sub { ('-', 'b') } else { ('+', 'c') };
        format!("({}{sym}{}, {flag}{}) → {} {flag}{}", self.x, self.y, self.carry_in, self.digit, self.carry_out)
    }
}

/// Column decomposition for nonnegative operands. Subtraction with a
/// negative result runs on `|larger| - |smaller|`. Returns the sign of the
/// result and the column steps.
pub fn column_steps(a: &Numeral, op: OpKind, b: &Numeral) -> (bool, Vec<ColumnStep>) {
    let (negative, x, y) = match op {
        OpKind::Sub if a.cmp_magnitude(b).is_lt() => (true, b, a),
        _ => (false, a, b),
    };
    let width = x.digit_count().max(y.digit_count());
    let mut carry = 0;
    let mut steps = Vec::with_capacity(width);
    for i in 0..width {
        let step = match op {
            OpKind::Sub => ColumnStep::sub(x.digit(i), y.digit(i), carry),
            _ => ColumnStep::add(x.digit(i), y.digit(i), carry),
        };
        carry = step.carry_out;
        steps.push(step);
    }
    (negative, steps)
}

/// Prompt followed directly by the answer, no auxiliary tokens.
pub fn gen_direct(a: &Numeral, op: OpKind, b: &Numeral, e: Endianness) -> Trace {
    let value = oracle_eval(a, op, b);
    Trace {
        prompt: Problem::new(a.clone(), op, b.clone()).prompt(e),
        steps: Vec::new(),
        answer: value.render(e),
        answer_value: value,
        method: MethodVariant { endianness: e, step_by_step: false },
        op,
    }
}

fn gen_stepwise_mul(a: &Numeral, b: &Numeral, e: Endianness) -> Result<Trace, TraceError> {
    if a.is_negative() || b.is_negative() {
        return Err(TraceError::NegativeOperand { op: OpKind::Mul, problem: format!("{a} * {b}") });
    }
    let (records, value) = mul_steps(a, b);
    Ok(Trace {
        prompt: Problem::new(a.clone(), OpKind::Mul, b.clone()).prompt(e),
        steps: records.iter().map(|r| r.render(b, e)).collect(),
        answer: value.render(e),
        answer_value: value,
        method: MethodVariant { endianness: e, step_by_step: true },
        op: OpKind::Mul,
    })
}

/// The little-endian step-by-step multiplication trace.
pub fn gen_left_multiplication(a: &Numeral, b: &Numeral) -> Result<Trace, TraceError> {
    gen_stepwise_mul(a, b, Endianness::Little)
}

/// Same step records as [`gen_left_multiplication`], rendered big-endian.
pub fn gen_big_endian_stepwise_mul(a: &Numeral, b: &Numeral) -> Result<Trace, TraceError> {
    gen_stepwise_mul(a, b, Endianness::Big)
}

pub fn gen_stepwise_addsub(a: &Numeral, op: OpKind, b: &Numeral, e: Endianness) -> Result<Trace, TraceError> {
    assert!(op != OpKind::Mul, "column traces cover addition and subtraction only");
    if a.is_negative() || b.is_negative() {
        return Err(TraceError::NegativeOperand { op, problem: format!("{a} {} {b}", op.symbol()) });
    }
    let (negative, columns) = column_steps(a, op, b);
    let mut steps = Vec::with_capacity(columns.len() + 1);
    if op == OpKind::Sub {
        steps.push(if negative { "-" } else { "+" }.to_string());
    }
    steps.extend(columns.iter().map(|c| c.render(op)));
    let value = oracle_eval(a, op, b);
    Ok(Trace {
        prompt: Problem::new(a.clone(), op, b.clone()).prompt(e),
        steps,
        answer: value.render(e),
        answer_value: value,
        method: MethodVariant { endianness: e, step_by_step: true },
        op,
    })
}

/// Dispatches to the generator for `method`.
pub fn generate(problem: &Problem, method: MethodVariant) -> Result<Trace, TraceError> {
    let Problem { a, op, b } = problem;
    match (method.step_by_step, op) {
        (false, _) => Ok(gen_direct(a, *op, b, method.endianness)),
        (true, OpKind::Mul) => gen_stepwise_mul(a, b, method.endianness),
        (true, _) => gen_stepwise_addsub(a, *op, b, method.endianness),
    }
}
