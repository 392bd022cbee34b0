//! Batched training forward/backward pass.

use super::kernels::{
    attention_backward, attention_forward, cross_entropy, gelu_backward, gelu_forward, layernorm_backward,
    layernorm_forward, linear_backward, linear_forward, masked_nll, AttnShape, Scalar,
};
use super::{ModelError, Parameters};
use crate::tokenizer::{TokenId, PAD};

/// Right-padded next-token batch: `inputs[r]` predicts `targets[r]` where
/// `mask[r]` is set. Rows are `batch x len`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Batch {
    pub inputs: Vec<TokenId>,
    pub targets: Vec<TokenId>,
    pub mask: Vec<bool>,
    pub batch: usize,
    pub len: usize,
}

impl Batch {
    /// Builds a batch from whole sequences (prompt, target, EOS).
    /// With `mask_prompt`, only predictions of tokens at index
    /// `>= prompt_len` are supervised.
    pub fn from_sequences(seqs: &[&[TokenId]], prompt_lens: &[usize], mask_prompt: bool) -> Batch {
        let len = seqs.iter().map(|s| s.len().saturating_sub(1)).max().unwrap_or(0).max(1);
        let n = seqs.len() * len;
        let (mut inputs, mut targets, mut mask) = (vec![PAD; n], vec![PAD; n], vec![false; n]);
        for (i, (seq, &plen)) in seqs.iter().zip(prompt_lens).enumerate() {
            for t in 0..seq.len().saturating_sub(1) {
                inputs[i * len + t] = seq[t];
                targets[i * len + t] = seq[t + 1];
                mask[i * len + t] = !mask_prompt || t + 1 >= plen;
            }
        }
        Batch { inputs, targets, mask, batch: seqs.len(), len }
    }

    pub fn rows(&self) -> usize {
        self.batch * self.len
    }
}

#[derive(Debug, Default, Clone)]
struct LayerActs<T> {
    ln1: Vec<T>,
    ln1_mean: Vec<T>,
    ln1_rstd: Vec<T>,
    qkv: Vec<T>,
    probs: Vec<T>,
    attn: Vec<T>,
    mid: Vec<T>,
    ln2: Vec<T>,
    ln2_mean: Vec<T>,
    ln2_rstd: Vec<T>,
    fc: Vec<T>,
    act: Vec<T>,
}

/// Activation and gradient buffers, reused across steps.
#[derive(Debug, Default, Clone)]
pub struct Workspace<T> {
    resid: Vec<Vec<T>>,
    layers: Vec<LayerActs<T>>,
    lnf: Vec<T>,
    lnf_mean: Vec<T>,
    lnf_rstd: Vec<T>,
    logits: Vec<T>,
    d_resid: Vec<T>,
    d_mid: Vec<T>,
    d_norm: Vec<T>,
    d_attn: Vec<T>,
    d_qkv: Vec<T>,
    d_act: Vec<T>,
    d_fc: Vec<T>,
    batch: usize,
    len: usize,
}

fn sized<T: Scalar>(v: &mut Vec<T>, n: usize) {
    v.clear();
    v.resize(n, T::zero());
}

impl<T: Scalar> Workspace<T> {
    pub fn new() -> Self {
        Workspace {
            resid: Vec::new(),
            layers: Vec::new(),
            lnf: Vec::new(),
            lnf_mean: Vec::new(),
            lnf_rstd: Vec::new(),
            logits: Vec::new(),
            d_resid: Vec::new(),
            d_mid: Vec::new(),
            d_norm: Vec::new(),
            d_attn: Vec::new(),
            d_qkv: Vec::new(),
            d_act: Vec::new(),
            d_fc: Vec::new(),
            batch: 0,
            len: 0,
        }
    }

    fn prepare(&mut self, p: &Parameters<T>, batch: usize, len: usize) {
        let c = &p.config;
        let n = batch * len;
        let (d, f, h) = (c.width, c.ff_width, c.heads);
        self.resid.resize_with(c.layers + 1, Vec::new);
        for r in &mut self.resid {
            sized(r, n * d);
        }
        self.layers.resize_with(c.layers, LayerActs::default);
        for a in &mut self.layers {
            sized(&mut a.ln1, n * d);
            sized(&mut a.ln1_mean, n);
            sized(&mut a.ln1_rstd, n);
            sized(&mut a.qkv, n * 3 * d);
            sized(&mut a.probs, batch * h * len * len);
            sized(&mut a.attn, n * d);
            sized(&mut a.mid, n * d);
            sized(&mut a.ln2, n * d);
            sized(&mut a.ln2_mean, n);
            sized(&mut a.ln2_rstd, n);
            sized(&mut a.fc, n * f);
            sized(&mut a.act, n * f);
        }
        sized(&mut self.lnf, n * d);
        sized(&mut self.lnf_mean, n);
        sized(&mut self.lnf_rstd, n);
        sized(&mut self.logits, n * c.vocab_size);
        self.batch = batch;
        self.len = len;
    }

    /// Logits of the last forward pass, `rows x vocab`.
    pub fn logits(&self) -> &[T] {
        &self.logits
    }

    /// Attention weights of `layer` from the last forward pass,
    /// `batch x heads x len x len`.
    pub fn attention_probs(&self, layer: usize) -> &[T] {
        &self.layers[layer].probs
    }
}

/// Per layer, per head, a `len x len` row-stochastic, lower-triangular
/// attention matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionCapture {
    pub len: usize,
    pub heads: Vec<Vec<Vec<f64>>>,
}

impl AttentionCapture {
    pub fn matrix(&self, layer: usize, head: usize) -> &[f64] {
        &self.heads[layer][head]
    }
}

impl<T: Scalar> Parameters<T> {
    fn check_len(&self, len: usize) -> Result<(), ModelError> {
        if len > self.config.context {
            return Err(ModelError::ContextOverflow { len, context: self.config.context });
        }
        Ok(())
    }

    /// Runs the network over `inputs` (`batch x len`), filling `ws`.
    pub fn forward_batch(&self, ws: &mut Workspace<T>, inputs: &[TokenId], batch: usize, len: usize) -> Result<(), ModelError> {
        self.check_len(len)?;
        let c = &self.config;
        let (d, f, vocab) = (c.width, c.ff_width, c.vocab_size);
        let n = batch * len;
        ws.prepare(self, batch, len);
        let p = &self.data;
        let lay = &self.layout;
        let wte = &p[lay.wte.clone()];
        let wpe = &p[lay.wpe.clone()];
        for (r, &tok) in inputs[..n].iter().enumerate() {
            let t = r % len;
            let row = &mut ws.resid[0][r * d..(r + 1) * d];
            let e = &wte[tok as usize * d..(tok as usize + 1) * d];
            let pe = &wpe[t * d..(t + 1) * d];
            for ((o, &a), &b) in row.iter_mut().zip(e).zip(pe) {
                *o = a + b;
            }
        }
        let shape = AttnShape { batch, len, width: d, heads: c.heads };
        for (l, ly) in lay.layers.iter().enumerate() {
            let (before, after) = ws.resid.split_at_mut(l + 1);
            let x = &before[l];
            let next = &mut after[0];
            let a = &mut ws.layers[l];
            layernorm_forward(&mut a.ln1, &mut a.ln1_mean, &mut a.ln1_rstd, x, &p[ly.ln1_g.clone()], &p[ly.ln1_b.clone()], n, d);
            linear_forward(&mut a.qkv, &a.ln1, &p[ly.qkv_w.clone()], &p[ly.qkv_b.clone()], n, d, 3 * d);
            attention_forward(&mut a.attn, &mut a.probs, &a.qkv, shape);
            linear_forward(&mut a.mid, &a.attn, &p[ly.proj_w.clone()], &p[ly.proj_b.clone()], n, d, d);
            for (m, &xi) in a.mid.iter_mut().zip(x.iter()) {
                *m = *m + xi;
            }
            layernorm_forward(&mut a.ln2, &mut a.ln2_mean, &mut a.ln2_rstd, &a.mid, &p[ly.ln2_g.clone()], &p[ly.ln2_b.clone()], n, d);
            linear_forward(&mut a.fc, &a.ln2, &p[ly.fc_w.clone()], &p[ly.fc_b.clone()], n, d, f);
            gelu_forward(&mut a.act, &a.fc);
            linear_forward(next, &a.act, &p[ly.out_w.clone()], &p[ly.out_b.clone()], n, f, d);
            for (o, &m) in next.iter_mut().zip(a.mid.iter()) {
                *o = *o + m;
            }
        }
        let last = &ws.resid[c.layers];
        layernorm_forward(&mut ws.lnf, &mut ws.lnf_mean, &mut ws.lnf_rstd, last, &p[lay.lnf_g.clone()], &p[lay.lnf_b.clone()], n, d);
        linear_forward(&mut ws.logits, &ws.lnf, &p[lay.head_w.clone()], &p[lay.head_b.clone()], n, d, vocab);
        Ok(())
    }

    /// Logits (`tokens.len() x vocab`) for one sequence, optionally with
    /// every head's attention matrix.
    pub fn forward(&self, tokens: &[TokenId], capture: bool) -> Result<(Vec<T>, Option<AttentionCapture>), ModelError> {
        let mut ws = Workspace::new();
        self.forward_batch(&mut ws, tokens, 1, tokens.len())?;
        let capture = capture.then(|| {
            let len = tokens.len();
            let heads = (0..self.config.layers)
                .map(|l| {
                    ws.attention_probs(l)
                        .chunks(len * len)
                        .map(|m| m.iter().map(|v| v.to_f64_lossless()).collect())
                        .collect()
                })
                .collect();
            AttentionCapture { len, heads }
        });
        Ok((ws.logits, capture))
    }

    /// Mean masked NLL of `batch`, no gradients.
    pub fn loss(&self, ws: &mut Workspace<T>, batch: &Batch) -> Result<T, ModelError> {
        self.forward_batch(ws, &batch.inputs, batch.batch, batch.len)?;
        masked_nll(&ws.logits, &batch.targets, &batch.mask, self.config.vocab_size).ok_or(ModelError::EmptyMask)
    }

    /// Forward and backward over `batch`. Overwrites `grads` (same layout
    /// as the parameters) and returns the mean masked NLL.
    pub fn loss_and_grad(&self, ws: &mut Workspace<T>, batch: &Batch, grads: &mut [T]) -> Result<T, ModelError> {
        assert_eq!(grads.len(), self.data.len());
        if !batch.mask.iter().any(|&m| m) {
            return Err(ModelError::EmptyMask);
        }
        self.forward_batch(ws, &batch.inputs, batch.batch, batch.len)?;
        let c = &self.config;
        let (d, f, vocab) = (c.width, c.ff_width, c.vocab_size);
        let (bsz, len) = (batch.batch, batch.len);
        let n = bsz * len;
        let loss = cross_entropy(&mut ws.logits, &batch.targets, &batch.mask, vocab).ok_or(ModelError::EmptyMask)?;

        grads.fill(T::zero());
        let p = &self.data;
        let lay = &self.layout;
        sized(&mut ws.d_resid, n * d);
        sized(&mut ws.d_mid, n * d);
        sized(&mut ws.d_norm, n * d);
        sized(&mut ws.d_attn, n * d);
        sized(&mut ws.d_qkv, n * 3 * d);
        sized(&mut ws.d_act, n * f);
        sized(&mut ws.d_fc, n * f);

        {
            let (head_w, head_b) = two_mut(grads, lay.head_w.clone(), lay.head_b.clone());
            linear_backward(&mut ws.d_norm, head_w, head_b, &ws.logits, &ws.lnf, &p[lay.head_w.clone()], n, d, vocab, false);
            let (g, b) = two_mut(grads, lay.lnf_g.clone(), lay.lnf_b.clone());
            layernorm_backward(
                &mut ws.d_resid,
                g,
                b,
                &ws.d_norm,
                &ws.resid[c.layers],
                &ws.lnf_mean,
                &ws.lnf_rstd,
                &p[lay.lnf_g.clone()],
                n,
                d,
            );
        }

        let shape = AttnShape { batch: bsz, len, width: d, heads: c.heads };
        for (l, ly) in lay.layers.iter().enumerate().rev() {
            let a = &ws.layers[l];
            // resid[l+1] = mid + act W_out + b_out
            ws.d_mid.copy_from_slice(&ws.d_resid);
            {
                let (w, b) = two_mut(grads, ly.out_w.clone(), ly.out_b.clone());
                linear_backward(&mut ws.d_act, w, b, &ws.d_resid, &a.act, &p[ly.out_w.clone()], n, f, d, false);
            }
            gelu_backward(&mut ws.d_fc, &ws.d_act, &a.fc);
            {
                let (w, b) = two_mut(grads, ly.fc_w.clone(), ly.fc_b.clone());
                linear_backward(&mut ws.d_norm, w, b, &ws.d_fc, &a.ln2, &p[ly.fc_w.clone()], n, d, f, false);
                let (g, b) = two_mut(grads, ly.ln2_g.clone(), ly.ln2_b.clone());
                layernorm_backward(&mut ws.d_mid, g, b, &ws.d_norm, &a.mid, &a.ln2_mean, &a.ln2_rstd, &p[ly.ln2_g.clone()], n, d);
            }
            // mid = resid[l] + attn W_proj + b_proj
            ws.d_resid.copy_from_slice(&ws.d_mid);
            {
                let (w, b) = two_mut(grads, ly.proj_w.clone(), ly.proj_b.clone());
                linear_backward(&mut ws.d_attn, w, b, &ws.d_mid, &a.attn, &p[ly.proj_w.clone()], n, d, d, false);
            }
            attention_backward(&mut ws.d_qkv, &ws.d_attn, &a.qkv, &a.probs, shape);
            {
                let (w, b) = two_mut(grads, ly.qkv_w.clone(), ly.qkv_b.clone());
                linear_backward(&mut ws.d_norm, w, b, &ws.d_qkv, &a.ln1, &p[ly.qkv_w.clone()], n, d, 3 * d, false);
                let (g, b) = two_mut(grads, ly.ln1_g.clone(), ly.ln1_b.clone());
                layernorm_backward(&mut ws.d_resid, g, b, &ws.d_norm, &ws.resid[l], &a.ln1_mean, &a.ln1_rstd, &p[ly.ln1_g.clone()], n, d);
            }
        }

        let (dwte, dwpe) = two_mut(grads, lay.wte.clone(), lay.wpe.clone());
        for (r, &tok) in batch.inputs[..n].iter().enumerate() {
            let t = r % len;
            let g = &ws.d_resid[r * d..(r + 1) * d];
            for (o, &v) in dwte[tok as usize * d..(tok as usize + 1) * d].iter_mut().zip(g) {
                *o = *o + v;
            }
            for (o, &v) in dwpe[t * d..(t + 1) * d].iter_mut().zip(g) {
                *o = *o + v;
            }
        }
        Ok(loss)
    }
}

/// Two disjoint mutable windows of one buffer; `a` must precede `b`.
fn two_mut<T>(buf: &mut [T], a: std::ops::Range<usize>, b: std::ops::Range<usize>) -> (&mut [T], &mut [T]) {
    assert!(a.end <= b.start, "ranges must be ordered and disjoint");
    let (lo, hi) = buf.split_at_mut(b.start);
    (&mut lo[a], &mut hi[..b.end - b.start])
}
