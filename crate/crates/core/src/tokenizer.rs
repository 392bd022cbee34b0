//! Character-level vocabulary: one character is one token.

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type TokenId = u32;

pub const PAD: TokenId = 0;
pub const EOS: TokenId = 1;
const PAD_SYMBOL: &str = "<pad>";
const EOS_SYMBOL: &str = "<eos>";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TokenizerError {
    #[error("character {ch:?} at byte {offset} is not in the vocabulary")]
    UnknownSymbol { ch: char, offset: usize },
    #[error("token id {id} is not a text symbol")]
    UnknownId { id: TokenId },
    #[error("malformed vocabulary: {0}")]
    Malformed(String),
}

/// Symbol table. Id 0 is PAD, id 1 is EOS, then the digits `0`-`9`, then
/// every other corpus character in code-point order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    chars: Vec<char>,
    index: HashMap<char, TokenId>,
}

const SPECIALS: usize = 2;

impl Vocabulary {
    fn from_chars(chars: Vec<char>) -> Self {
        let index = chars.iter().enumerate().map(|(i, &c)| (c, (i + SPECIALS) as TokenId)).collect();
        Vocabulary { chars, index }
    }

    /// Covers every character of `texts`; the order depends only on the
    /// character set, not on record order.
    pub fn build<'a>(texts: impl IntoIterator<Item = &'a str>) -> Self {
        let mut set: BTreeSet<char> = texts.into_iter().flat_map(str::chars).collect();
        let digits: Vec<char> = ('0'..='9').collect();
        for d in &digits {
            set.remove(d);
        }
        Vocabulary::from_chars(digits.into_iter().chain(set).collect())
    }

    pub fn len(&self) -> usize {
        self.chars.len() + SPECIALS
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn id(&self, ch: char) -> Option<TokenId> {
        self.index.get(&ch).copied()
    }

    pub fn contains(&self, ch: char) -> bool {
        self.index.contains_key(&ch)
    }

    /// Printable label for any id, specials included.
    pub fn label(&self, id: TokenId) -> String {
        match id {
            PAD => PAD_SYMBOL.to_string(),
            EOS => EOS_SYMBOL.to_string(),
            _ => self.chars.get(id as usize - SPECIALS).map(|c| c.to_string()).unwrap_or_else(|| format!("<{id}>")),
        }
    }

    pub fn encode(&self, text: &str) -> Result<Vec<TokenId>, TokenizerError> {
        text.char_indices()
            .map(|(offset, ch)| self.id(ch).ok_or(TokenizerError::UnknownSymbol { ch, offset }))
            .collect()
    }

    pub fn decode(&self, ids: &[TokenId]) -> Result<String, TokenizerError> {
        ids.iter()
            .map(|&id| {
                (id as usize)
                    .checked_sub(SPECIALS)
                    .and_then(|i| self.chars.get(i).copied())
                    .ok_or(TokenizerError::UnknownId { id })
            })
            .collect()
    }

    /// `encode(prompt + target)` followed by EOS.
    pub fn encode_example(&self, prompt: &str, target: &str) -> Result<Vec<TokenId>, TokenizerError> {
        let mut ids = self.encode(prompt)?;
        let mut tail = self.encode(target).map_err(|e| match e {
            TokenizerError::UnknownSymbol { ch, offset } => {
                TokenizerError::UnknownSymbol { ch, offset: offset + prompt.len() }
            }
            other => other,
        })?;
        ids.append(&mut tail);
        ids.push(EOS);
        Ok(ids)
    }

    /// Tokens one training example costs: prompt, target and EOS.
    pub fn count_tokens(&self, prompt: &str, target: &str) -> Result<usize, TokenizerError> {
        self.encode_example(prompt, target).map(|ids| ids.len())
    }

    /// Symbols in id order, specials included.
    pub fn symbols(&self) -> Vec<String> {
        (0..self.len() as TokenId).map(|id| self.label(id)).collect()
    }

    pub fn from_symbols(symbols: &[String]) -> Result<Self, TokenizerError> {
        let bad = |m: &str| Err(TokenizerError::Malformed(m.to_string()));
        if symbols.len() < SPECIALS || symbols[0] != PAD_SYMBOL || symbols[1] != EOS_SYMBOL {
            return bad("first two symbols must be <pad> and <eos>");
        }
        let mut chars = Vec::with_capacity(symbols.len() - SPECIALS);
        for s in &symbols[SPECIALS..] {
            let mut it = s.chars();
            match (it.next(), it.next()) {
                (Some(c), None) => chars.push(c),
                _ => return bad(&format!("symbol {s:?} is not a single character")),
            }
        }
        let vocab = Vocabulary::from_chars(chars);
        if vocab.index.len() != vocab.chars.len() {
            return bad("duplicate symbol");
        }
        Ok(vocab)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.symbols()).expect("strings serialize")
    }

    pub fn from_json(json: &str) -> Result<Self, TokenizerError> {
        let symbols: Vec<String> = serde_json::from_str(json).map_err(|e| TokenizerError::Malformed(e.to_string()))?;
        Vocabulary::from_symbols(&symbols)
    }
}

impl Serialize for Vocabulary {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        self.symbols().serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Vocabulary {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let symbols = Vec::<String>::deserialize(deserializer)?;
        Vocabulary::from_symbols(&symbols).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeral::Numeral;
    use crate::tracegen::{gen_direct, gen_left_multiplication, OpKind};
    use crate::Endianness;
    use proptest::prelude::*;

    fn golden_mul() -> String {
        gen_left_multiplication(&Numeral::from_u64(23), &Numeral::from_u64(45)).unwrap().text()
    }

    #[test]
    fn left_add_vocabulary_is_small() {
        let texts = ["71+52=24", "99+1=001", "5+0=5"];
        let v = Vocabulary::build(texts);
        // pad, eos, ten digits, '+', '='
        assert_eq!(v.len(), 14);
        assert!(v.len() <= 16);
        assert_eq!(v.id('0'), Some(2));
    }

    #[test]
    fn empty_record_changes_nothing() {
        let a = Vocabulary::build(["71+52=24"]);
        let b = Vocabulary::build(["71+52=24", ""]);
        assert_eq!(a, b);
        let c = Vocabulary::build(["=25+17", "42"]);
        assert_eq!(a, c);
    }

    #[test]
    fn encode_decode_examples() {
        let v = Vocabulary::build(["71+52=24"]);
        let ids = v.encode("71+52=").unwrap();
        assert_eq!(ids.len(), 6);
        assert_eq!(v.decode(&ids).unwrap(), "71+52=");
        assert!(v.encode("").unwrap().is_empty());
        let text = golden_mul();
        let v = Vocabulary::build([text.as_str()]);
        assert_eq!(v.decode(&v.encode(&text).unwrap()).unwrap(), text);
    }

    #[test]
    fn unknown_symbol_offset() {
        let v = Vocabulary::build(["12+3="]);
        assert_eq!(v.encode("12*3"), Err(TokenizerError::UnknownSymbol { ch: '*', offset: 2 }));
        assert_eq!(v.encode_example("1=", "x").unwrap_err(), TokenizerError::UnknownSymbol { ch: 'x', offset: 2 });
        assert_eq!(v.decode(&[EOS]), Err(TokenizerError::UnknownId { id: EOS }));
        assert!(v.count_tokens("1=", "x").is_err());
    }

    #[test]
    fn token_counts() {
        let le = gen_direct(&Numeral::from_u64(17), OpKind::Add, &Numeral::from_u64(25), Endianness::Little);
        let be = gen_direct(&Numeral::from_u64(17), OpKind::Add, &Numeral::from_u64(25), Endianness::Big);
        let mul = golden_mul();
        let v = Vocabulary::build([le.text().as_str(), mul.as_str()]);
        assert_eq!(v.count_tokens(&le.prompt, &le.answer).unwrap(), 9);
        assert_eq!(v.count_tokens(&be.prompt, &be.answer).unwrap(), 9);
        let (p, t) = mul.split_at(6);
        let stepwise = v.count_tokens(p, t).unwrap();
        assert_eq!(stepwise, mul.chars().count() + 1);
        assert!(stepwise > 10 * 9);
    }

    #[test]
    fn json_round_trip() {
        let v = Vocabulary::build([golden_mul().as_str(), "(7+5, c0) → 2 c1"]);
        let json = v.to_json();
        assert!(json.starts_with("[\"<pad>\",\"<eos>\",\"0\""));
        assert_eq!(Vocabulary::from_json(&json).unwrap(), v);
        assert!(Vocabulary::from_json("[\"<eos>\"]").is_err());
    }

    proptest! {
        #[test]
        fn round_trip_any_covered_text(s in "[0-9+*=;: A-Za-z\\n→-]{0,64}") {
            let v = Vocabulary::build([s.as_str()]);
            let ids = v.encode(&s).unwrap();
            prop_assert_eq!(ids.len(), s.chars().count());
            prop_assert_eq!(v.decode(&ids).unwrap(), s);
        }
    }
}
