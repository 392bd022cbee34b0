//! Little-endian arithmetic corpora, trace verification and a from-scratch
//! micro-transformer for training on them.

pub mod dataset;
pub mod experiment;
pub mod fsutil;
pub mod model;
pub mod numeral;
pub mod tokenizer;
pub mod tracegen;

pub use numeral::{Endianness, Numeral, NumeralError, ParseMode};
pub use tracegen::{MethodVariant, OpKind, Problem, Trace};
