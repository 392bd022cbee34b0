//! Corpus-level measurements: token cost and learning-complexity sums.

use std::collections::BTreeMap;

use num_bigint::BigUint;
use num_traits::{Pow, Zero};
use serde::Serialize;

use crate::dataset::CorpusRecord;
use crate::tokenizer::{TokenizerError, Vocabulary};
use crate::tracegen::OpKind;

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct TokenUsage {
    pub examples: usize,
    pub total: usize,
    pub per_op: BTreeMap<OpKind, usize>,
}

impl TokenUsage {
    /// Mean tokens per example, 0 for an empty corpus.
    pub fn per_example(&self) -> f64 {
        if self.examples == 0 {
            0.0
        } else {
            self.total as f64 / self.examples as f64
        }
    }
}

/// Sum of `count_tokens` (prompt, target and EOS) over `records`.
pub fn token_usage(records: &[CorpusRecord], vocab: &Vocabulary) -> Result<TokenUsage, TokenizerError> {
    let mut usage = TokenUsage::default();
    for r in records {
        let n = vocab.count_tokens(&r.prompt, &r.target)?;
        usage.examples += 1;
        usage.total += n;
        *usage.per_op.entry(r.op).or_default() += n;
    }
    Ok(usage)
}

fn ten_pow(e: u32) -> BigUint {
    Pow::pow(BigUint::from(10u32), e)
}

/// `sum_{i=0}^{n} 10^(2i+2)`: every digit of a big-endian answer depends on
/// all lower digits of both operands.
pub fn complexity_big(n: u32) -> BigUint {
    (0..=n).fold(BigUint::zero(), |acc, i| acc + ten_pow(2 * i + 2))
}

/// `sum_{i=0}^{n} 10^5`: each little-endian answer digit depends on two
/// operand digits, the previous two and the previous output digit.
pub fn complexity_little(n: u32) -> BigUint {
    (0..=n).fold(BigUint::zero(), |acc, _| acc + ten_pow(5))
}

/// `n * 10^5`, the upper bound quoted alongside the little-endian sum; it
/// undercounts the sum by one term.
pub fn complexity_little_bound(n: u32) -> BigUint {
    BigUint::from(n) * ten_pow(5)
}
