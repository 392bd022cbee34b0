//! Decoder-only transformer trained from scratch.
//!
//! Pre-norm GPT blocks (`x + attn(ln(x))`, `x + mlp(ln(x))`) over learned
//! token and position embeddings, a final layer norm and an untied output
//! projection. Gradients are derived by hand per block; the model is
//! generic over `f32` (training) and `f64` (gradient checks).

mod checkpoint;
pub mod kernels;
mod generate;
mod optim;
mod transformer;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_VERSION};
pub use generate::{generate, generate_batch};
pub use kernels::Scalar;
pub use optim::{AdamW, OptimizerConfig};
pub use transformer::{AttentionCapture, Batch, Workspace};

use std::ops::Range;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("sequence of {len} tokens exceeds the context length {context}")]
    ContextOverflow { len: usize, context: usize },
    #[error("loss mask selects no positions")]
    EmptyMask,
    #[error("non-finite gradient at step {step}")]
    NonFiniteGradient { step: u64 },
    #[error("checkpoint version mismatch: {0}")]
    VersionMismatch(String),
    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub layers: usize,
    pub width: usize,
    pub heads: usize,
    pub ff_width: usize,
    pub context: usize,
    pub vocab_size: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig { layers: 4, width: 128, heads: 4, ff_width: 512, context: 512, vocab_size: 16, seed: 0 }
    }
}

impl ModelConfig {
    pub fn head_dim(&self) -> usize {
        self.width / self.heads
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::InvalidConfig(m));
        if self.layers == 0 || self.width == 0 || self.heads == 0 || self.ff_width == 0 {
            return bad("layers, width, heads and ff_width must be positive".into());
        }
        if !self.width.is_multiple_of(self.heads) {
            return bad(format!("width {} is not divisible by {} heads", self.width, self.heads));
        }
        if self.context == 0 || self.vocab_size < 2 {
            return bad("context must be positive and the vocabulary must hold PAD and EOS".into());
        }
        Ok(())
    }

    pub fn parameter_count(&self) -> usize {
        Layout::new(self).total
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct LayerLayout {
    pub ln1_g: Range<usize>,
    pub ln1_b: Range<usize>,
    pub qkv_w: Range<usize>,
    pub qkv_b: Range<usize>,
    pub proj_w: Range<usize>,
    pub proj_b: Range<usize>,
    pub ln2_g: Range<usize>,
    pub ln2_b: Range<usize>,
    pub fc_w: Range<usize>,
    pub fc_b: Range<usize>,
    pub out_w: Range<usize>,
    pub out_b: Range<usize>,
}

/// Offsets of every tensor inside the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct Layout {
    pub wte: Range<usize>,
    pub wpe: Range<usize>,
    pub layers: Vec<LayerLayout>,
    pub lnf_g: Range<usize>,
    pub lnf_b: Range<usize>,
    pub head_w: Range<usize>,
    pub head_b: Range<usize>,
    pub total: usize,
}

struct Cursor(usize);

impl Cursor {
    fn take(&mut self, n: usize) -> Range<usize> {
        let r = self.0..self.0 + n;
        self.0 += n;
        r
    }
}

impl Layout {
    pub fn new(c: &ModelConfig) -> Self {
        let (d, f) = (c.width, c.ff_width);
        let mut cur = Cursor(0);
        let wte = cur.take(c.vocab_size * d);
        let wpe = cur.take(c.context * d);
        let layers = (0..c.layers)
            .map(|_| LayerLayout {
                ln1_g: cur.take(d),
                ln1_b: cur.take(d),
                qkv_w: cur.take(d * 3 * d),
                qkv_b: cur.take(3 * d),
                proj_w: cur.take(d * d),
                proj_b: cur.take(d),
                ln2_g: cur.take(d),
                ln2_b: cur.take(d),
                fc_w: cur.take(d * f),
                fc_b: cur.take(f),
                out_w: cur.take(f * d),
                out_b: cur.take(d),
            })
            .collect();
        let lnf_g = cur.take(d);
        let lnf_b = cur.take(d);
        let head_w = cur.take(d * c.vocab_size);
        let head_b = cur.take(c.vocab_size);
        Layout { wte, wpe, layers, lnf_g, lnf_b, head_w, head_b, total: cur.0 }
    }

    /// Named tensors with their init kind, in storage order.
    pub fn tensors(&self) -> Vec<(String, Range<usize>, TensorKind)> {
        use TensorKind::*;
        let mut out = vec![("wte".to_string(), self.wte.clone(), Embedding), ("wpe".to_string(), self.wpe.clone(), Embedding)];
        for (l, ly) in self.layers.iter().enumerate() {
            let named = [
                ("ln1_g", &ly.ln1_g, Gain),
                ("ln1_b", &ly.ln1_b, Bias),
                ("qkv_w", &ly.qkv_w, Weight),
                ("qkv_b", &ly.qkv_b, Bias),
                ("proj_w", &ly.proj_w, Weight),
                ("proj_b", &ly.proj_b, Bias),
                ("ln2_g", &ly.ln2_g, Gain),
                ("ln2_b", &ly.ln2_b, Bias),
                ("fc_w", &ly.fc_w, Weight),
                ("fc_b", &ly.fc_b, Bias),
                ("out_w", &ly.out_w, Weight),
                ("out_b", &ly.out_b, Bias),
            ];
            out.extend(named.into_iter().map(|(n, r, k)| (format!("layer{l}.{n}"), r.clone(), k)));
        }
        out.push(("lnf_g".into(), self.lnf_g.clone(), Gain));
        out.push(("lnf_b".into(), self.lnf_b.clone(), Bias));
        out.push(("head_w".into(), self.head_w.clone(), Weight));
        out.push(("head_b".into(), self.head_b.clone(), Bias));
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum TensorKind {
    Embedding,
    Weight,
    Gain,
    Bias,
}

impl TensorKind {
    /// Matrices and embeddings; the narrow decay set.
    pub fn decays(self) -> bool {
        matches!(self, TensorKind::Embedding | TensorKind::Weight)
    }
}

/// Model weights in one flat vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameters<T> {
    pub config: ModelConfig,
    pub data: Vec<T>,
    pub(crate) layout: Layout,
}

impl<T: Scalar> Parameters<T> {
    /// Scaled-normal init: std 0.02 for every matrix and embedding, unit
    /// gains, zero biases.
    /// Values are drawn in `f64` so both precisions start from the same point.
    pub fn init(config: &ModelConfig) -> Result<Self, ModelError> {
        config.validate()?;
        let layout = Layout::new(config);
        let mut data = vec![T::zero(); layout.total];
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let base = Normal::new(0.0, 0.02).unwrap();
        for (_, range, kind) in layout.tensors() {
            for v in &mut data[range] {
                *v = match kind {
                    TensorKind::Gain => T::one(),
                    TensorKind::Bias => T::zero(),
                    TensorKind::Embedding | TensorKind::Weight => T::of(base.sample(&mut rng)),
                };
            }
        }
        Ok(Parameters { config: config.clone(), data, layout })
    }

    pub fn from_data(config: &ModelConfig, data: Vec<T>) -> Result<Self, ModelError> {
        config.validate()?;
        let layout = Layout::new(config);
        if data.len() != layout.total {
            return Err(ModelError::CorruptCheckpoint(format!(
                "{} values for a model of {} parameters",
                data.len(),
                layout.total
            )));
        }
        Ok(Parameters { config: config.clone(), data, layout })
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Named tensor ranges, in storage order.
    pub fn tensor_ranges(&self) -> Vec<(String, Range<usize>)> {
        self.layout.tensors().into_iter().map(|(n, r, _)| (n, r)).collect()
    }

    pub(crate) fn decay_mask(&self) -> Vec<bool> {
        let mut mask = vec![false; self.data.len()];
        for (_, r, kind) in self.layout.tensors() {
            mask[r].fill(kind.decays());
        }
        mask
    }

    pub fn cast<U: Scalar>(&self) -> Parameters<U> {
        Parameters {
            config: self.config.clone(),
            data: self.data.iter().map(|v| U::of(v.to_f64_lossless())).collect(),
            layout: self.layout.clone(),
        }
    }
}
