//! Exact decimal integers stored least-significant digit first.
//!
//! Endianness only exists at the string boundary: [`Numeral::render`] and
//! [`Numeral::parse`] translate between the internal digit vector and either
//! a most-significant-first (`Big`) or least-significant-first (`Little`)
//! string. A leading `-` stays leftmost in both orders, so `-256` renders as
//! `-652` in little-endian.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use num_bigint::{BigInt, Sign};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Endianness {
    Big,
    Little,
}

impl Endianness {
    pub fn tag(self) -> &'static str {
        match self {
            Endianness::Big => "be",
            Endianness::Little => "le",
        }
    }
}

/// How [`Numeral::parse`] treats redundant high-order zeros and `-0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParseMode {
    /// Canonical form only; used when validating corpora.
    Strict,
    /// Normalizes padding; used for model output.
    Lenient,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum NumeralError {
    #[error("malformed numeral {input:?} at byte {offset}")]
    Malformed { input: String, offset: usize },
    #[error("numeral {input:?} carries a redundant high-order zero or a negative zero")]
    LeadingZeroViolation { input: String },
}

/// Sign plus little-endian base-10 digits.
///
/// Invariants: `digits` is nonempty, every entry is in `0..=9`, the last
/// entry is nonzero unless the value is zero (then `digits == [0]`), and
/// zero is never negative.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Numeral {
    negative: bool,
    digits: Vec<u8>,
}

impl Numeral {
    pub fn zero() -> Self {
        Numeral { negative: false, digits: vec![0] }
    }

    /// Builds a numeral from little-endian digits, stripping high-order
    /// zeros. Panics if a digit is out of range.
    pub fn from_le_digits(negative: bool, mut digits: Vec<u8>) -> Self {
        assert!(digits.iter().all(|&d| d <= 9), "digit out of range");
        while digits.len() > 1 && *digits.last().unwrap() == 0 {
            digits.pop();
        }
        if digits.is_empty() {
            digits.push(0);
        }
        let negative = negative && !(digits.len() == 1 && digits[0] == 0);
        Numeral { negative, digits }
    }

    pub fn from_u64(v: u64) -> Self {
        let mut digits = Vec::new();
        let mut rest = v;
        loop {
            digits.push((rest % 10) as u8);
            rest /= 10;
            if rest == 0 {
                break;
            }
        }
        Numeral { negative: false, digits }
    }

    pub fn from_i64(v: i64) -> Self {
        let mut n = Numeral::from_u64(v.unsigned_abs());
        n.negative = v < 0;
        n
    }

    pub fn from_integer(v: &BigInt) -> Self {
        let (sign, digits) = v.to_radix_le(10);
        Numeral::from_le_digits(sign == Sign::Minus, digits)
    }

    pub fn to_integer(&self) -> BigInt {
        let sign = if self.negative { Sign::Minus } else { Sign::Plus };
        BigInt::from_radix_le(sign, &self.digits, 10).expect("digits are base 10")
    }

    /// Little-endian digit slice; index `i` is the coefficient of `10^i`.
    pub fn digits(&self) -> &[u8] {
        &self.digits
    }

    /// Digit `i`, or 0 past the most significant digit.
    pub fn digit(&self, i: usize) -> u8 {
        self.digits.get(i).copied().unwrap_or(0)
    }

    pub fn digit_count(&self) -> usize {
        self.digits.len()
    }

    pub fn is_negative(&self) -> bool {
        self.negative
    }

    pub fn is_zero(&self) -> bool {
        self.digits.len() == 1 && self.digits[0] == 0
    }

    pub fn abs(&self) -> Numeral {
        Numeral { negative: false, digits: self.digits.clone() }
    }

    pub fn negated(&self) -> Numeral {
        Numeral::from_le_digits(!self.negative, self.digits.clone())
    }

    pub fn render(&self, endianness: Endianness) -> String {
        let mut out = String::with_capacity(self.digits.len() + 1);
        if self.negative {
            out.push('-');
        }
        let digit = |d: &u8| char::from(b'0' + d);
        match endianness {
            Endianness::Little => out.extend(self.digits.iter().map(digit)),
            Endianness::Big => out.extend(self.digits.iter().rev().map(digit)),
        }
        out
    }

    pub fn parse(s: &str, endianness: Endianness, mode: ParseMode) -> Result<Numeral, NumeralError> {
        let malformed = |offset| NumeralError::Malformed { input: s.to_string(), offset };
        let (negative, body, base) = match s.strip_prefix('-') {
            Some(rest) => (true, rest, 1),
            None => (false, s, 0),
        };
        if body.is_empty() {
            return Err(malformed(s.len()));
        }
        if let Some(pos) = body.bytes().position(|b| !b.is_ascii_digit()) {
            return Err(malformed(base + pos));
        }
        let mut digits: Vec<u8> = body.bytes().map(|b| b - b'0').collect();
        if endianness == Endianness::Big {
            digits.reverse();
        }
        let canonical = (digits.len() == 1 || *digits.last().unwrap() != 0)
            && !(negative && digits.iter().all(|&d| d == 0));
        if !canonical && mode == ParseMode::Strict {
            return Err(NumeralError::LeadingZeroViolation { input: s.to_string() });
        }
        Ok(Numeral::from_le_digits(negative, digits))
    }

    /// Compares magnitudes, ignoring sign.
    pub fn cmp_magnitude(&self, other: &Numeral) -> Ordering {
        self.digits
            .len()
            .cmp(&other.digits.len())
            .then_with(|| self.digits.iter().rev().cmp(other.digits.iter().rev()))
    }
}

impl Default for Numeral {
    fn default() -> Self {
        Numeral::zero()
    }
}

impl fmt::Display for Numeral {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render(Endianness::Big))
    }
}

impl FromStr for Numeral {
    type Err = NumeralError;

    /// Parses conventional big-endian decimal in strict mode.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Numeral::parse(s, Endianness::Big, ParseMode::Strict)
    }
}

impl From<u64> for Numeral {
    fn from(v: u64) -> Self {
        Numeral::from_u64(v)
    }
}

impl From<&BigInt> for Numeral {
    fn from(v: &BigInt) -> Self {
        Numeral::from_integer(v)
    }
}

impl Serialize for Numeral {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Numeral {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Magnitude arithmetic on little-endian digit vectors. These are the
/// column algorithms the step-by-step traces are built from; they never
/// touch a big-integer library.
pub mod digits {
    /// `a + b`, both little-endian magnitudes.
    pub fn add(a: &[u8], b: &[u8]) -> Vec<u8> {
        let len = a.len().max(b.len());
        let mut out = Vec::with_capacity(len + 1);
        let mut carry = 0u8;
        for i in 0..len {
            let s = a.get(i).copied().unwrap_or(0) + b.get(i).copied().unwrap_or(0) + carry;
            out.push(s % 10);
            carry = s / 10;
        }
        if carry > 0 {
            out.push(carry);
        }
        trim(out)
    }

    /// `a - b` for magnitudes with `a >= b`.
    pub fn sub(a: &[u8], b: &[u8]) -> Vec<u8> {
        let mut out = Vec::with_capacity(a.len());
        let mut borrow = 0i8;
        for (i, &x) in a.iter().enumerate() {
            let mut d = x as i8 - b.get(i).copied().unwrap_or(0) as i8 - borrow;
            borrow = 0;
            if d < 0 {
                d += 10;
                borrow = 1;
            }
            out.push(d as u8);
        }
        debug_assert_eq!(borrow, 0, "sub requires a >= b");
        trim(out)
    }

    /// `a * d` for a single digit `d`.
    pub fn mul_digit(a: &[u8], d: u8) -> Vec<u8> {
        let mut out = Vec::with_capacity(a.len() + 1);
        let mut carry = 0u8;
        for &x in a {
            let p = x * d + carry;
            out.push(p % 10);
            carry = p / 10;
        }
        if carry > 0 {
            out.push(carry);
        }
        trim(out)
    }

    /// Drops trailing (high-order) zeros, keeping a single zero for 0.
    pub fn trim(mut v: Vec<u8>) -> Vec<u8> {
        while v.len() > 1 && *v.last().unwrap() == 0 {
            v.pop();
        }
        if v.is_empty() {
            v.push(0);
        }
        v
    }

    pub fn is_zero(v: &[u8]) -> bool {
        v.iter().all(|&d| d == 0)
    }
}
