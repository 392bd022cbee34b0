//! Grammar-aware checker for trace targets.
//!
//! The checker walks a target in decode order and records each arithmetic
//! defect where it first becomes visible: a multiplication step is checked
//! for its product as soon as the product is read, and for the cumulative
//! sum update field by field after that. Checks are local (each step is
//! compared with the previous step as written), so one early mistake is
//! reported once rather than at every later step. Scanning stops at the
//! first grammar violation.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{column_steps, oracle_eval, MethodVariant, OpKind, Problem, Trace, ANSWER_PREFIX, TERMINATOR};
use crate::numeral::{digits, Endianness, Numeral, ParseMode};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("trace does not match its grammar at byte {offset}: expected {expected}")]
pub struct TraceParseError {
    pub offset: usize,
    pub expected: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DefectKind {
    /// Wrong intermediate product (or wrong operand copied into it).
    Product,
    /// Wrong cumulative-sum update: high section, fixed digit or low run.
    Sum,
    /// Wrong column of an addition/subtraction trace.
    Column,
    /// Wrong sign line of a subtraction trace.
    Sign,
    /// Too few or too many step lines.
    StepCount,
    /// Final answer differs from the exact result.
    Answer,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Defect {
    pub step: Option<usize>,
    pub kind: DefectKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StepCheck {
    pub index: usize,
    pub product_ok: bool,
    pub sum_ok: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct VerificationReport {
    pub steps: Vec<StepCheck>,
    pub answer: Option<Numeral>,
    pub answer_correct: bool,
    /// In decode order; empty for a fully correct trace.
    pub defects: Vec<Defect>,
}

impl VerificationReport {
    pub fn is_clean(&self) -> bool {
        self.defects.is_empty() && self.answer_correct
    }
}

/// Result of scanning a target: defects found before scanning stopped and
/// the grammar violation that stopped it, if any.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Audit {
    pub report: VerificationReport,
    pub parse_error: Option<TraceParseError>,
}

impl Audit {
    pub fn first_defect(&self) -> Option<Defect> {
        self.report.defects.first().copied()
    }
}

struct Cursor<'a> {
    s: &'a str,
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn new(s: &'a str) -> Self {
        Cursor { s, pos: 0 }
    }

    fn fail<T>(&self, expected: impl Into<String>) -> Result<T, TraceParseError> {
        Err(TraceParseError { offset: self.pos, expected: expected.into() })
    }

    fn rest(&self) -> &'a str {
        &self.s[self.pos..]
    }

    fn at_end(&self) -> bool {
        self.pos == self.s.len()
    }

    fn peek(&self, lit: &str) -> bool {
        self.rest().starts_with(lit)
    }

    fn lit(&mut self, lit: &str) -> Result<(), TraceParseError> {
        if self.peek(lit) {
            self.pos += lit.len();
            Ok(())
        } else {
            self.fail(format!("{lit:?}"))
        }
    }

    fn digit_str(&mut self) -> &'a str {
        let len = self.rest().bytes().take_while(u8::is_ascii_digit).count();
        let out = &self.rest()[..len];
        self.pos += len;
        out
    }

    fn digit(&mut self) -> Result<u8, TraceParseError> {
        match self.rest().bytes().next() {
            Some(b) if b.is_ascii_digit() => {
                self.pos += 1;
                Ok(b - b'0')
            }
            _ => self.fail("a digit"),
        }
    }

    fn uint(&mut self) -> Result<usize, TraceParseError> {
        let start = self.pos;
        let s = self.digit_str();
        s.parse().or_else(|_| {
            self.pos = start;
            self.fail("an index")
        })
    }

    fn numeral(&mut self, e: Endianness) -> Result<Numeral, TraceParseError> {
        let start = self.pos;
        if self.peek("-") {
            self.pos += 1;
        }
        if self.digit_str().is_empty() {
            self.pos = start;
            return self.fail("a numeral");
        }
        Ok(Numeral::parse(&self.s[start..self.pos], e, ParseMode::Lenient).expect("scanned a valid numeral"))
    }

    /// A verbatim digit run, returned least significant first.
    fn digit_run(&mut self, e: Endianness) -> Result<Vec<u8>, TraceParseError> {
        let s = self.digit_str();
        if s.is_empty() {
            return self.fail("a digit run");
        }
        let mut run: Vec<u8> = s.bytes().map(|b| b - b'0').collect();
        if e == Endianness::Big {
            run.reverse();
        }
        Ok(run)
    }

    fn end(&self) -> Result<(), TraceParseError> {
        if self.at_end() {
            Ok(())
        } else {
            self.fail("end of trace")
        }
    }
}

struct Scan {
    report: VerificationReport,
}

impl Scan {
    fn defect(&mut self, step: Option<usize>, kind: DefectKind) {
        self.report.defects.push(Defect { step, kind });
    }
}

/// Scans `target` (the text after the prompt) for `problem` under `method`.
pub fn audit_target(problem: &Problem, method: MethodVariant, target: &str) -> Audit {
    let mut scan = Scan { report: VerificationReport::default() };
    let mut cur = Cursor::new(target);
    let result = if !method.step_by_step {
        scan_answer(&mut scan, &mut cur, problem, method.endianness, false)
    } else if problem.a.is_negative() || problem.b.is_negative() {
        cur.fail("nonnegative operands for a step trace")
    } else if problem.op == OpKind::Mul {
        scan_mul_steps(&mut scan, &mut cur, problem, method.endianness)
            .and_then(|_| scan_answer(&mut scan, &mut cur, problem, method.endianness, true))
    } else {
        scan_column_steps(&mut scan, &mut cur, problem)
            .and_then(|_| scan_answer(&mut scan, &mut cur, problem, method.endianness, true))
    };
    Audit { report: scan.report, parse_error: result.err() }
}

fn scan_answer(
    scan: &mut Scan,
    cur: &mut Cursor<'_>,
    problem: &Problem,
    e: Endianness,
    framed: bool,
) -> Result<(), TraceParseError> {
    if framed {
        cur.lit(ANSWER_PREFIX)?;
    }
    let value = cur.numeral(e)?;
    let correct = value == oracle_eval(&problem.a, problem.op, &problem.b);
    scan.report.answer = Some(value);
    scan.report.answer_correct = correct;
    if !correct {
        scan.defect(None, DefectKind::Answer);
    }
    if framed {
        cur.lit(TERMINATOR)?;
    }
    cur.end()
}

fn scan_mul_steps(scan: &mut Scan, cur: &mut Cursor<'_>, problem: &Problem, e: Endianness) -> Result<(), TraceParseError> {
    let (a, b) = (&problem.a, &problem.b);
    let expected = a.digit_count();
    let mut prev_after = Numeral::zero();
    let mut prev_low: Vec<u8> = Vec::new();
    let mut i = 0;
    while !cur.peek(ANSWER_PREFIX) {
        if i == expected {
            scan.defect(Some(i), DefectKind::StepCount);
        }
        cur.lit("S")?;
        let start = cur.pos;
        if cur.uint()? != i {
            cur.pos = start;
            return cur.fail(format!("step index {i}"));
        }
        cur.lit(": ")?;
        let a_digit = cur.digit()?;
        cur.lit("*")?;
        let b_copy = cur.numeral(e)?;
        cur.lit(" = ")?;
        let product = cur.numeral(e)?;
        let true_product = Numeral::from_le_digits(false, digits::mul_digit(b.digits(), a.digit(i)));
        let product_ok = i < expected && a_digit == a.digit(i) && &b_copy == b && product == true_product;
        if !product_ok && i < expected {
            scan.defect(Some(i), DefectKind::Product);
        }

        let mut sum_ok = true;
        let mut check = |scan: &mut Scan, ok: bool| {
            if sum_ok && !ok {
                sum_ok = false;
                scan.defect(Some(i), DefectKind::Sum);
            }
        };
        cur.lit(" ; ")?;
        let before = cur.numeral(e)?;
        check(scan, before == prev_after);
        cur.lit(" + ")?;
        let addend = cur.numeral(e)?;
        check(scan, addend == product);
        cur.lit(" = ")?;
        let after = cur.numeral(e)?;
        let sum = Numeral::from_le_digits(false, digits::add(before.abs().digits(), addend.abs().digits()));
        check(scan, !before.is_negative() && !addend.is_negative() && after == sum);
        cur.lit(" ; fix ")?;
        let fixed = cur.digit()?;
        check(scan, fixed == after.digit(0));
        cur.lit(" ; low ")?;
        let low = cur.digit_run(e)?;
        let mut expected_low = prev_low.clone();
        expected_low.push(fixed);
        check(scan, low == expected_low);
        cur.lit("\n")?;

        scan.report.steps.push(StepCheck { index: i, product_ok, sum_ok });
        prev_after = Numeral::from_le_digits(false, after.digits().get(1..).unwrap_or_default().to_vec());
        prev_low = low;
        i += 1;
    }
    if i < expected {
        scan.defect(Some(i), DefectKind::StepCount);
    }
    Ok(())
}

fn scan_column_steps(scan: &mut Scan, cur: &mut Cursor<'_>, problem: &Problem) -> Result<(), TraceParseError> {
    let op = problem.op;
    let (negative, columns) = column_steps(&problem.a, op, &problem.b);
    if op == OpKind::Sub {
        let sign_negative = if cur.peek("-\n") {
            true
        } else if cur.peek("+\n") {
            false
        } else {
            return cur.fail("a sign line");
        };
        cur.pos += 2;
        if sign_negative != negative {
            scan.defect(Some(0), DefectKind::Sign);
        }
    }
    let (sym, flag) = if op == OpKind::Sub { ("-", "b") } else { ("+", "c") };
    let mut prev_carry = 0;
    let mut i = 0;
    while !cur.peek(ANSWER_PREFIX) {
        if i == columns.len() {
            scan.defect(Some(i), DefectKind::StepCount);
        }
        cur.lit("(")?;
        let x = cur.digit()?;
        cur.lit(sym)?;
        let y = cur.digit()?;
        cur.lit(", ")?;
        cur.lit(flag)?;
        let carry_in = cur.digit()?;
        cur.lit(") → ")?;
        let digit = cur.digit()?;
        cur.lit(" ")?;
        cur.lit(flag)?;
        let carry_out = cur.digit()?;
        cur.lit("\n")?;
        let truth = columns.get(i);
        let redo = if op == OpKind::Sub {
            super::ColumnStep::sub(x, y, carry_in.min(1))
        } else {
            super::ColumnStep::add(x, y, carry_in.min(1))
        };
        let ok = truth.is_some_and(|t| t.x == x && t.y == y)
            && carry_in == prev_carry
            && redo.digit == digit
            && redo.carry_out == carry_out;
        if !ok && i < columns.len() {
            scan.defect(Some(i), DefectKind::Column);
        }
        scan.report.steps.push(StepCheck { index: i, product_ok: true, sum_ok: ok });
        prev_carry = carry_out;
        i += 1;
    }
    if i < columns.len() {
        scan.defect(Some(i), DefectKind::StepCount);
    }
    Ok(())
}

/// Parses `A{op}B=` under `e`.
pub fn parse_prompt(prompt: &str, e: Endianness) -> Result<Problem, TraceParseError> {
    let mut cur = Cursor::new(prompt);
    let a = cur.numeral(e)?;
    let op = match cur.rest().chars().next() {
        Some('+') => OpKind::Add,
        Some('-') => OpKind::Sub,
        Some('*') => OpKind::Mul,
        _ => return cur.fail("an operator"),
    };
    cur.pos += 1;
    let b = cur.numeral(e)?;
    cur.lit("=")?;
    cur.end()?;
    Ok(Problem::new(a, op, b))
}

/// Checks a whole trace: the prompt must parse back to a problem of the
/// trace's operation, and the target must match the method grammar.
pub fn verify_trace(t: &Trace) -> Result<VerificationReport, TraceParseError> {
    let problem = parse_prompt(&t.prompt, t.method.endianness)?;
    if problem.op != t.op {
        return Err(TraceParseError { offset: t.prompt.len() - 1, expected: format!("operator {}", t.op.symbol()) });
    }
    let audit = audit_target(&problem, t.method, &t.target());
    match audit.parse_error {
        Some(mut err) => {
            err.offset += t.prompt.len();
            Err(err)
        }
        None => Ok(audit.report),
    }
}

/// Pulls the final answer out of model output, tolerating broken steps and
/// redundant zeros.
pub fn extract_answer(target: &str, method: MethodVariant) -> Option<Numeral> {
    let body = if method.step_by_step {
        let start = target.rfind(ANSWER_PREFIX)? + ANSWER_PREFIX.len();
        let rest = &target[start..];
        match rest.find(TERMINATOR) {
            Some(end) => &rest[..end],
            None => rest,
        }
    } else {
        target
    };
    Numeral::parse(body, method.endianness, ParseMode::Lenient).ok()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tracegen::{generate, gen_left_multiplication};
    use proptest::prelude::*;

    fn n(v: u64) -> Numeral {
        Numeral::from_u64(v)
    }

    fn mul_2345() -> (Problem, Trace) {
        (Problem::from_u64(23, OpKind::Mul, 45), gen_left_multiplication(&n(23), &n(45)).unwrap())
    }

    #[test]
    fn generated_trace_is_clean() {
        let (_, t) = mul_2345();
        let report = verify_trace(&t).unwrap();
        assert!(report.defects.is_empty());
        assert!(report.answer_correct);
        assert_eq!(report.steps.len(), 2);
    }

    #[test]
    fn altered_product_is_flagged() {
        let (_, mut t) = mul_2345();
        // 135 is "531" little-endian; 134 is "431"
        t.steps[0] = t.steps[0].replace("= 531 ; 0 + 531", "= 431 ; 0 + 431").replace("= 531 ; fix 5", "= 431 ; fix 4");
        t.steps[0] = t.steps[0].replace("low 5", "low 4");
        let report = verify_trace(&t).unwrap();
        assert_eq!(report.defects[0], Defect { step: Some(0), kind: DefectKind::Product });
    }

    #[test]
    fn altered_sum_is_flagged() {
        let (_, mut t) = mul_2345();
        t.steps[1] = t.steps[1].replace("= 301 ;", "= 302 ;");
        let report = verify_trace(&t).unwrap();
        assert_eq!(report.defects, vec![Defect { step: Some(1), kind: DefectKind::Sum }]);
        assert!(report.steps[1].product_ok && !report.steps[1].sum_ok);
    }

    #[test]
    fn parse_failure_reports_offset() {
        let (_, mut t) = mul_2345();
        t.steps[0] = t.steps[0].replace(" ; fix", " ; fiz");
        let err = verify_trace(&t).unwrap_err();
        let text = t.text();
        assert_eq!(&text[err.offset..err.offset + 5], " ; fi");
    }

    #[test]
    fn missing_step_and_wrong_answer() {
        let (p, t) = mul_2345();
        let target = format!("{}\nA: 5301;;", t.steps[0]);
        let audit = audit_target(&p, MethodVariant::LE_STEP, &target);
        assert!(audit.parse_error.is_none());
        assert_eq!(audit.first_defect(), Some(Defect { step: Some(1), kind: DefectKind::StepCount }));

        let target = t.target().replace("A: 5301", "A: 5311");
        let audit = audit_target(&p, MethodVariant::LE_STEP, &target);
        assert_eq!(audit.report.defects, vec![Defect { step: None, kind: DefectKind::Answer }]);
    }

    #[test]
    fn direct_targets() {
        let p = Problem::from_u64(17, OpKind::Add, 25);
        assert!(audit_target(&p, MethodVariant::LE_DIRECT, "24").report.is_clean());
        assert!(audit_target(&p, MethodVariant::LE_DIRECT, "240").report.is_clean());
        let wrong = audit_target(&p, MethodVariant::LE_DIRECT, "25");
        assert_eq!(wrong.report.defects[0].kind, DefectKind::Answer);
        let empty = audit_target(&p, MethodVariant::LE_DIRECT, "");
        assert_eq!(empty.parse_error.unwrap().offset, 0);
    }

    #[test]
    fn column_traces() {
        let p = Problem::from_u64(100, OpKind::Sub, 356);
        let t = generate(&p, MethodVariant::LE_STEP).unwrap();
        assert!(verify_trace(&t).unwrap().is_clean());
        let bad_sign = t.target().replacen('-', "+", 1);
        let audit = audit_target(&p, MethodVariant::LE_STEP, &bad_sign);
        assert_eq!(audit.first_defect(), Some(Defect { step: Some(0), kind: DefectKind::Sign }));
        let bad_col = t.target().replace("(5-0, b0) → 5 b0", "(5-0, b0) → 4 b0");
        let audit = audit_target(&p, MethodVariant::LE_STEP, &bad_col);
        assert_eq!(audit.first_defect(), Some(Defect { step: Some(1), kind: DefectKind::Column }));
    }

    #[test]
    fn extract_answer_is_lenient() {
        assert_eq!(extract_answer("2400", MethodVariant::LE_DIRECT), Some(n(42)));
        assert_eq!(extract_answer("garbage\nA: 5301;;", MethodVariant::LE_STEP), Some(n(1035)));
        assert_eq!(extract_answer("A: 1035", MethodVariant::BE_STEP), Some(n(1035)));
        assert_eq!(extract_answer("", MethodVariant::LE_DIRECT), None);
        assert_eq!(extract_answer("S0: 1", MethodVariant::LE_STEP), None);
    }

    #[test]
    fn prompt_parsing() {
        assert_eq!(parse_prompt("71+52=", Endianness::Little).unwrap(), Problem::from_u64(17, OpKind::Add, 25));
        let p = parse_prompt("-5--3=", Endianness::Big).unwrap();
        assert_eq!((p.a, p.op, p.b), (Numeral::from_i64(-5), OpKind::Sub, Numeral::from_i64(-3)));
        assert!(parse_prompt("71+52", Endianness::Little).is_err());
    }

    proptest! {
        #[test]
        fn every_generator_verifies(a in 0u64..1_000_000_000_000, b in 0u64..1_000_000_000_000, op in 0usize..3, m in 0usize..4) {
            let op = OpKind::ALL[op];
            let method = [MethodVariant::LE_DIRECT, MethodVariant::BE_DIRECT, MethodVariant::LE_STEP, MethodVariant::BE_STEP][m];
            let p = Problem::from_u64(a, op, b);
            let t = generate(&p, method).unwrap();
            prop_assert_eq!(&t.answer_value, &p.oracle());
            let report = verify_trace(&t).unwrap();
            prop_assert!(report.is_clean(), "{:?}", report);
        }

        #[test]
        fn endian_variants_share_step_content(a in 0u64..1_000_000, b in 0u64..1_000_000) {
            let le = generate(&Problem::from_u64(a, OpKind::Mul, b), MethodVariant::LE_STEP).unwrap();
            let be = generate(&Problem::from_u64(a, OpKind::Mul, b), MethodVariant::BE_STEP).unwrap();
            prop_assert_eq!(le.steps.len(), n(a).digit_count());
            prop_assert_eq!(le.steps.len(), be.steps.len());
            prop_assert_eq!(&le.answer_value, &be.answer_value);
        }
    }
}
