//! Forward and backward kernels on row-major buffers.
//!
//! Activations are `rows x width` slices. Weight matrices are stored
//! `[in, out]`, so a linear layer is `y = x W + b`.

use std::fmt::Debug;
use std::iter::Sum;

use num_traits::Float;

pub trait Scalar: Float + Default + Debug + Send + Sync + Sum + 'static {
    fn of(x: f64) -> Self;

    fn to_f64_lossless(self) -> f64;

    /// `C = alpha * A B + beta * C` with explicit element strides.
    ///
    /// # Safety
    /// The pointers and strides must describe valid `m x k`, `k x n` and
    /// `m x n` matrices; `c` must not alias `a` or `b`.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );
}

impl Scalar for f32 {
    fn of(x: f64) -> Self {
        x as f32
    }

    fn to_f64_lossless(self) -> f64 {
        self as f64
    }

    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: f32,
        a: *const f32,
        rsa: isize,
        csa: isize,
        b: *const f32,
        rsb: isize,
        csb: isize,
        beta: f32,
        c: *mut f32,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

impl Scalar for f64 {
    fn of(x: f64) -> Self {
        x
    }

    fn to_f64_lossless(self) -> f64 {
        self
    }

    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: f64,
        a: *const f64,
        rsa: isize,
        csa: isize,
        b: *const f64,
        rsb: isize,
        csb: isize,
        beta: f64,
        c: *mut f64,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

/// `c (+)= op(a) op(b)`, where `op(a)` is `m x k` and `op(b)` is `k x n`.
/// A transposed operand is stored in its untransposed row-major shape.
#[allow(clippy::too_many_arguments)]
pub fn matmul<T: Scalar>(
    c: &mut [T],
    a: &[T],
    b: &[T],
    m: usize,
    k: usize,
    n: usize,
    trans_a: bool,
    trans_b: bool,
    accumulate: bool,
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n, "matmul shape mismatch");
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if trans_a { (1, m) } else { (k, 1) };
    let (rsb, csb) = if trans_b { (1, k) } else { (n, 1) };
    let beta = if accumulate { T::one() } else { T::zero() };
    // SAFETY: the assert above bounds every index the strides can reach, and
    // `c` is a distinct &mut borrow.
    unsafe {
        T::gemm(
            m,
            k,
            n,
            T::one(),
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        )
    }
}

/// `y = x W + bias` for `rows` rows.
pub fn linear_forward<T: Scalar>(y: &mut [T], x: &[T], w: &[T], bias: &[T], rows: usize, din: usize, dout: usize) {
    for row in y[..rows * dout].chunks_exact_mut(dout) {
        row.copy_from_slice(bias);
    }
    matmul(y, x, w, rows, din, dout, false, false, true);
}

/// Accumulates weight and bias gradients; writes (or adds to) `dx`.
#[allow(clippy::too_many_arguments)]
pub fn linear_backward<T: Scalar>(
    dx: &mut [T],
    dw: &mut [T],
    dbias: &mut [T],
    dy: &[T],
    x: &[T],
    w: &[T],
    rows: usize,
    din: usize,
    dout: usize,
    accumulate_dx: bool,
) {
    matmul(dw, x, dy, din, rows, dout, true, false, true);
    for row in dy[..rows * dout].chunks_exact(dout) {
        for (g, &v) in dbias.iter_mut().zip(row) {
            *g = *g + v;
        }
    }
    matmul(dx, dy, w, rows, dout, din, false, true, accumulate_dx);
}

pub const LN_EPS: f64 = 1e-5;

#[allow(clippy::too_many_arguments)]
pub fn layernorm_forward<T: Scalar>(
    y: &mut [T],
    mean: &mut [T],
    rstd: &mut [T],
    x: &[T],
    gamma: &[T],
    beta: &[T],
    rows: usize,
    d: usize,
) {
    let inv_d = T::of(1.0 / d as f64);
    for r in 0..rows {
        let xr = &x[r * d..(r + 1) * d];
        let m = xr.iter().copied().sum::<T>() * inv_d;
        let var = xr.iter().map(|&v| (v - m) * (v - m)).sum::<T>() * inv_d;
        let s = T::one() / (var + T::of(LN_EPS)).sqrt();
        for (((o, &v), &g), &b) in y[r * d..(r + 1) * d].iter_mut().zip(xr).zip(gamma).zip(beta) {
            *o = (v - m) * s * g + b;
        }
        mean[r] = m;
        rstd[r] = s;
    }
}

/// Adds the input gradient into `dx`; accumulates `dgamma`, `dbeta`.
#[allow(clippy::too_many_arguments)]
pub fn layernorm_backward<T: Scalar>(
    dx: &mut [T],
    dgamma: &mut [T],
    dbeta: &mut [T],
    dy: &[T],
    x: &[T],
    mean: &[T],
    rstd: &[T],
    gamma: &[T],
    rows: usize,
    d: usize,
) {
    let inv_d = T::of(1.0 / d as f64);
    for r in 0..rows {
        let (m, s) = (mean[r], rstd[r]);
        let xr = &x[r * d..(r + 1) * d];
        let dyr = &dy[r * d..(r + 1) * d];
        let mut dnorm_mean = T::zero();
        let mut dnorm_norm_mean = T::zero();
        for i in 0..d {
            let norm = (xr[i] - m) * s;
            let dnorm = dyr[i] * gamma[i];
            dnorm_mean = dnorm_mean + dnorm;
            dnorm_norm_mean = dnorm_norm_mean + dnorm * norm;
        }
        dnorm_mean = dnorm_mean * inv_d;
        dnorm_norm_mean = dnorm_norm_mean * inv_d;
        let dxr = &mut dx[r * d..(r + 1) * d];
        for i in 0..d {
            let norm = (xr[i] - m) * s;
            let dnorm = dyr[i] * gamma[i];
            dgamma[i] = dgamma[i] + dyr[i] * norm;
            dbeta[i] = dbeta[i] + dyr[i];
            dxr[i] = dxr[i] + s * (dnorm - dnorm_mean - norm * dnorm_norm_mean);
        }
    }
}

const GELU_C: f64 = 0.044715;

fn gelu_scale() -> f64 {
    (2.0 / std::f64::consts::PI).sqrt()
}

/// Tanh approximation of GELU.
pub fn gelu_forward<T: Scalar>(y: &mut [T], x: &[T]) {
    let (s, c, half) = (T::of(gelu_scale()), T::of(GELU_C), T::of(0.5));
    for (o, &v) in y.iter_mut().zip(x) {
        *o = half * v * (T::one() + (s * (v + c * v * v * v)).tanh());
    }
}

/// Overwrites `dx` with the GELU input gradient.
pub fn gelu_backward<T: Scalar>(dx: &mut [T], dy: &[T], x: &[T]) {
    let (s, c, half) = (T::of(gelu_scale()), T::of(GELU_C), T::of(0.5));
    let three = T::of(3.0);
    for ((g, &d), &v) in dx.iter_mut().zip(dy).zip(x) {
        let inner = s * (v + c * v * v * v);
        let th = inner.tanh();
        let sech2 = T::one() - th * th;
        let local = half * (T::one() + th) + half * v * sech2 * s * (T::one() + three * c * v * v);
        *g = d * local;
    }
}

#[derive(Debug, Clone, Copy)]
pub struct AttnShape {
    pub batch: usize,
    pub len: usize,
    pub width: usize,
    pub heads: usize,
}

impl AttnShape {
    pub fn head_dim(&self) -> usize {
        self.width / self.heads
    }
}

fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

/// Causal multi-head attention over packed `qkv` rows (`[q | k | v]`,
/// each `width` wide). Writes head outputs into `out` and the attention
/// weights into `probs` (`batch x heads x len x len`, zero above the
/// diagonal).
pub fn attention_forward<T: Scalar>(out: &mut [T], probs: &mut [T], qkv: &[T], sh: AttnShape) {
    let AttnShape { batch, len, width: d, heads } = sh;
    let hd = sh.head_dim();
    let scale = T::of(1.0 / (hd as f64).sqrt());
    let row3 = 3 * d;
    for b in 0..batch {
        for h in 0..heads {
            for t in 0..len {
                let q = &qkv[(b * len + t) * row3 + h * hd..][..hd];
                let prow = &mut probs[((b * heads + h) * len + t) * len..][..len];
                let mut max = T::neg_infinity();
                for s in 0..=t {
                    let k = &qkv[(b * len + s) * row3 + d + h * hd..][..hd];
                    let score = dot(q, k) * scale;
                    prow[s] = score;
                    max = max.max(score);
                }
                let mut total = T::zero();
                for p in &mut prow[..=t] {
                    *p = (*p - max).exp();
                    total = total + *p;
                }
                let inv = T::one() / total;
                for p in &mut prow[..=t] {
                    *p = *p * inv;
                }
                prow[t + 1..].fill(T::zero());
                let o = &mut out[(b * len + t) * d + h * hd..][..hd];
                o.fill(T::zero());
                for s in 0..=t {
                    let p = prow[s];
                    let v = &qkv[(b * len + s) * row3 + 2 * d + h * hd..][..hd];
                    for (oi, &vi) in o.iter_mut().zip(v) {
                        *oi = *oi + p * vi;
                    }
                }
            }
        }
    }
}

/// Overwrites `dqkv` with the gradient of `attention_forward`.
pub fn attention_backward<T: Scalar>(dqkv: &mut [T], dout: &[T], qkv: &[T], probs: &[T], sh: AttnShape) {
    let AttnShape { batch, len, width: d, heads } = sh;
    let hd = sh.head_dim();
    let scale = T::of(1.0 / (hd as f64).sqrt());
    let row3 = 3 * d;
    dqkv[..batch * len * row3].fill(T::zero());
    let mut dp = vec![T::zero(); len];
    for b in 0..batch {
        for h in 0..heads {
            for t in 0..len {
                let prow = &probs[((b * heads + h) * len + t) * len..][..len];
                let dout_t = &dout[(b * len + t) * d + h * hd..][..hd];
                let mut weighted = T::zero();
                for s in 0..=t {
                    let vi = (b * len + s) * row3 + 2 * d + h * hd;
                    dp[s] = dot(dout_t, &qkv[vi..vi + hd]);
                    weighted = weighted + prow[s] * dp[s];
                    let p = prow[s];
                    for (g, &o) in dqkv[vi..vi + hd].iter_mut().zip(dout_t) {
                        *g = *g + p * o;
                    }
                }
                let qi = (b * len + t) * row3 + h * hd;
                for s in 0..=t {
                    let ds = prow[s] * (dp[s] - weighted) * scale;
                    if ds == T::zero() {
                        continue;
                    }
                    let ki = (b * len + s) * row3 + d + h * hd;
                    for j in 0..hd {
                        dqkv[qi + j] = dqkv[qi + j] + ds * qkv[ki + j];
                        dqkv[ki + j] = dqkv[ki + j] + ds * qkv[qi + j];
                    }
                }
            }
        }
    }
}

/// Softmax cross-entropy averaged over `mask`ed rows. Overwrites `logits`
/// with the loss gradient and returns the loss; `None` if the mask is empty.
pub fn cross_entropy<T: Scalar>(logits: &mut [T], targets: &[u32], mask: &[bool], vocab: usize) -> Option<T> {
    let count = mask.iter().filter(|&&m| m).count();
    if count == 0 {
        return None;
    }
    let inv = T::of(1.0 / count as f64);
    let mut loss = T::zero();
    for (r, row) in logits.chunks_exact_mut(vocab).enumerate().take(mask.len()) {
        if !mask[r] {
            row.fill(T::zero());
            continue;
        }
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut total = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total = total + *v;
        }
        let target = targets[r] as usize;
        loss = loss - (row[target] / total).ln();
        for v in row.iter_mut() {
            *v = *v / total * inv;
        }
        row[target] = row[target] - inv;
    }
    Some(loss * inv)
}

/// Mean negative log-likelihood over masked rows, without gradients.
pub fn masked_nll<T: Scalar>(logits: &[T], targets: &[u32], mask: &[bool], vocab: usize) -> Option<T> {
    let count = mask.iter().filter(|&&m| m).count();
    if count == 0 {
        return None;
    }
    let mut loss = T::zero();
    for (r, row) in logits.chunks_exact(vocab).enumerate().take(mask.len()) {
        if !mask[r] {
            continue;
        }
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let lse = row.iter().map(|&v| (v - max).exp()).sum::<T>().ln() + max;
        loss = loss + lse - row[targets[r] as usize];
    }
    Some(loss / T::of(count as f64))
}
