//! Attention-map export and the carry-alignment diagnostic.

use serde::{Deserialize, Serialize};

use crate::model::{ModelError, Parameters};
use crate::tokenizer::{TokenId, Vocabulary};
use crate::tracegen::{MethodVariant, OpKind, Problem};

/// One head's causal attention matrix over a processed sequence. Rows are
/// query (output) positions, columns key (input) positions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionDump {
    pub layer: usize,
    pub head: usize,
    pub shape: [usize; 2],
    pub labels: Vec<String>,
    /// Row-major softmax weights.
    pub raw: Vec<f64>,
    /// Element-wise square root of `raw`, for display.
    pub sqrt: Vec<f64>,
}

impl AttentionDump {
    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.raw[row * self.shape[1] + col]
    }

    pub fn file_name(&self) -> String {
        format!("attn_l{}_h{}.json", self.layer, self.head)
    }
}

/// Captures every requested (layer, head) pair for `tokens`; empty selectors
/// mean all layers or all heads.
pub fn export_attention(
    params: &Parameters<f32>,
    vocab: &Vocabulary,
    tokens: &[TokenId],
    layers: &[usize],
    heads: &[usize],
) -> Result<Vec<AttentionDump>, ModelError> {
    let (_, capture) = params.forward(tokens, true)?;
    let capture = capture.expect("capture requested");
    let c = &params.config;
    let pick = |sel: &[usize], n: usize| if sel.is_empty() { (0..n).collect() } else { sel.to_vec() };
    let labels: Vec<String> = tokens.iter().map(|&t| vocab.label(t)).collect();
    let len = tokens.len();
    let mut out = Vec::new();
    for l in pick(layers, c.layers) {
        for h in pick(heads, c.heads) {
            if l >= c.layers || h >= c.heads {
                return Err(ModelError::InvalidConfig(format!("no head {h} in layer {l}")));
            }
            let raw = capture.matrix(l, h).to_vec();
            let sqrt = raw.iter().map(|v| v.sqrt()).collect();
            out.push(AttentionDump { layer: l, head: h, shape: [len, len], labels: labels.clone(), raw, sqrt });
        }
    }
    Ok(out)
}

/// Share of little-endian direct-addition answer digits whose query row
/// puts its largest weight on a carry-relevant position, per head.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CarryAlignment {
    pub digits: usize,
    /// `(layer, head, fraction)` in storage order.
    pub heads: Vec<(usize, usize, f64)>,
}

impl CarryAlignment {
    pub fn best(&self) -> Option<(usize, usize, f64)> {
        self.heads.iter().copied().max_by(|a, b| a.2.total_cmp(&b.2))
    }
}

/// Key positions that can determine little-endian sum digit `i` of
/// `a+b=c`: `a_i`, `b_i`, `a_{i-1}`, `b_{i-1}` and `c_{i-1}`.
fn carry_positions(alen: usize, blen: usize, i: usize) -> Vec<usize> {
    let prompt = alen + blen + 2;
    let mut pos = Vec::new();
    for j in [Some(i), i.checked_sub(1)].into_iter().flatten() {
        if j < alen {
            pos.push(j);
        }
        if j < blen {
            pos.push(alen + 1 + j);
        }
    }
    if i > 0 {
        pos.push(prompt + i - 1);
    }
    pos
}

/// Runs each problem's prompt plus ground-truth answer through the model and
/// checks, for every answer digit, where each head's argmax key lands.
/// Problems must be non-negative additions rendered little-endian direct.
pub fn carry_alignment(
    params: &Parameters<f32>,
    vocab: &Vocabulary,
    problems: &[Problem],
) -> Result<CarryAlignment, ModelError> {
    let c = &params.config;
    let mut hits = vec![0usize; c.layers * c.heads];
    let mut digits = 0;
    for p in problems {
        if p.op != OpKind::Add || p.a.is_negative() || p.b.is_negative() {
            return Err(ModelError::InvalidConfig("carry alignment needs non-negative additions".into()));
        }
        let trace = crate::tracegen::generate(p, MethodVariant::LE_DIRECT).expect("direct traces always render");
        let tokens = vocab.encode(&trace.text()).map_err(|e| ModelError::InvalidConfig(e.to_string()))?;
        let (_, capture) = params.forward(&tokens, true)?;
        let capture = capture.expect("capture requested");
        let (alen, blen) = (p.a.digit_count(), p.b.digit_count());
        let prompt = alen + blen + 2;
        let len = tokens.len();
        for i in 0..trace.target().chars().count() {
            // the row predicting answer digit i sits one before it
            let row = prompt + i - 1;
            let allowed = carry_positions(alen, blen, i);
            digits += 1;
            for l in 0..c.layers {
                for h in 0..c.heads {
                    let m = &capture.matrix(l, h)[row * len..row * len + row + 1];
                    let arg = (0..m.len()).fold(0, |best, j| if m[j] > m[best] { j } else { best });
                    hits[l * c.heads + h] += allowed.contains(&arg) as usize;
                }
            }
        }
    }
    let heads = (0..c.layers)
        .flat_map(|l| (0..c.heads).map(move |h| (l, h)))
        .map(|(l, h)| (l, h, if digits == 0 { 0.0 } else { hits[l * c.heads + h] as f64 / digits as f64 }))
        .collect();
    Ok(CarryAlignment { digits, heads })
}
