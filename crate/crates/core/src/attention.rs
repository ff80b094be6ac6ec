//! Multi-head scaled dot-product attention.

use lgcd_tensor::nn::Linear;
use lgcd_tensor::{Graph, ParamStore, Real, Tensor, Var};
use rand::Rng;

use crate::error::Result;

/// Additive key mask value for padded tokens.
pub const MASKED: f64 = -1e9;

/// Queries of width `q_dim` attend over keys/values of width `kv_dim`; both
/// are projected into `d_model`, split across `heads`.
#[derive(Clone, Debug)]
pub struct MultiHeadAttention {
    pub w_q: Linear,
    pub w_k: Linear,
    pub w_v: Linear,
    pub w_o: Linear,
    pub heads: usize,
    pub d_model: usize,
}

/// Intermediate tensors of one attention call.
#[derive(Clone, Copy, Debug)]
pub struct AttentionTrace {
    /// Scaled pre-softmax scores, `[B, heads, Nq, Nk]` (mask included).
    pub scores: Var,
    /// Softmax weights over keys, `[B, heads, Nq, Nk]`.
    pub weights: Var,
    /// Head outputs before the output projection, `[B, Nq, d_model]`.
    pub context: Var,
}

impl MultiHeadAttention {
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        q_dim: usize,
        kv_dim: usize,
        d_model: usize,
        heads: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Self {
            w_q: Linear::new(store, &format!("{name}.w_q"), q_dim, d_model, true, rng)?,
            // a key bias shifts every score in a row equally, so it is omitted
            w_k: Linear::new(store, &format!("{name}.w_k"), kv_dim, d_model, false, rng)?,
            w_v: Linear::new(store, &format!("{name}.w_v"), kv_dim, d_model, true, rng)?,
            w_o: Linear::new(store, &format!("{name}.w_o"), d_model, d_model, true, rng)?,
            heads,
            d_model,
        })
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.heads
    }

    /// `[B, N, d_model] -> [B, heads, N, head_dim]`
    fn split_heads<T: Real>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let (b, n) = (g.shape(x)[0], g.shape(x)[1]);
        let x = g.reshape(x, [b, n, self.heads, self.head_dim()])?;
        Ok(g.permute(x, &[0, 2, 1, 3])?)
    }

    /// `q: [B, Nq, q_dim]`, `kv: [B, Nk, kv_dim]`, optional additive key mask
    /// broadcastable to `[B, 1, 1, Nk]`. Returns `[B, Nq, d_model]`.
    pub fn forward<T: Real>(
        &self,
        g: &mut Graph<'_, T>,
        q: Var,
        kv: Var,
        mask: Option<&Tensor<T>>,
    ) -> Result<(Var, AttentionTrace)> {
        let (b, nq) = (g.shape(q)[0], g.shape(q)[1]);
        let qp = self.w_q.forward(g, q)?;
        let kp = self.w_k.forward(g, kv)?;
        let vp = self.w_v.forward(g, kv)?;
        let qh = self.split_heads(g, qp)?;
        let kh = self.split_heads(g, kp)?;
        let vh = self.split_heads(g, vp)?;

        let raw = g.matmul_nt(qh, kh)?;
        let mut scores = g.mul_scalar(raw, 1.0 / (self.head_dim() as f64).sqrt());
        if let Some(m) = mask {
            let m = g.constant(m.clone());
            scores = g.add(scores, m)?;
        }
        let weights = g.softmax(scores, 3)?;
        let ctx = g.matmul(weights, vh)?;
        let ctx = g.permute(ctx, &[0, 2, 1, 3])?;
        let context = g.reshape(ctx, [b, nq, self.d_model])?;
        let out = self.w_o.forward(g, context)?;
        Ok((
            out,
            AttentionTrace {
                scores,
                weights,
                context,
            },
        ))
    }
}

/// Additive key mask `[B, 1, 1, prefix + L]` from per-sample token counts:
/// the first `prefix` keys and each sample's first `lengths[b]` word keys are
/// visible. Returns `None` when nothing is masked.
pub fn key_mask<T: Real>(lengths: &[usize], max_len: usize, prefix: usize) -> Option<Tensor<T>> {
    if lengths.iter().all(|&l| l == max_len) {
        return None;
    }
    let n = prefix + max_len;
    let mut data = vec![T::zero(); lengths.len() * n];
    for (b, &l) in lengths.iter().enumerate() {
        for v in &mut data[b * n + prefix + l..(b + 1) * n] {
            *v = T::lit(MASKED);
        }
    }
    Some(Tensor::new([lengths.len(), 1, 1, n], data).expect("mask shape"))
}
