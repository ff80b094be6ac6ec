//! Text fusion attention: visual tokens query the word embeddings, the
//! result is added to a projection of the input, and a convolutional spatial
//! gate reweights every position.

use lgcd_tensor::nn::{Conv2d, LayerNorm, Linear};
use lgcd_tensor::{Graph, ParamStore, Real, Tensor, Var};
use rand::Rng;

use crate::attention::{AttentionTrace, MultiHeadAttention};
use crate::config::ModelConfig;
use crate::error::Result;

/// `[B, C, h, w] -> [B, h·w, C]`, positions in row-major order.
pub fn grid_to_tokens<T: Real>(g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
    let s = g.shape(x).to_vec();
    let x = g.reshape(x, [s[0], s[1], s[2] * s[3]])?;
    Ok(g.permute(x, &[0, 2, 1])?)
}

/// `[B, h·w, C] -> [B, C, h, w]`
pub fn tokens_to_grid<T: Real>(g: &mut Graph<'_, T>, x: Var, h: usize, w: usize) -> Result<Var> {
    let s = g.shape(x).to_vec();
    let x = g.permute(x, &[0, 2, 1])?;
    Ok(g.reshape(x, [s[0], s[2], h, w])?)
}

#[derive(Clone, Debug)]
pub struct CrossAttentionBlock {
    pub norm: LayerNorm,
    pub attn: MultiHeadAttention,
    /// Projects the fused visual input to `D_m` for the residual path.
    pub residual: Linear,
}

/// 1-channel convolution followed by a sigmoid.
#[derive(Clone, Debug)]
pub struct SpatialGate {
    pub conv: Conv2d,
}

impl SpatialGate {
    /// Returns `(x ∘ gate, gate)` with `gate: [B, 1, h, w]`.
    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<(Var, Var)> {
        let pre = self.conv.forward(g, x)?;
        let gate = g.sigmoid(pre);
        Ok((g.mul(x, gate)?, gate))
    }
}

/// Outputs of one fusion scale.
#[derive(Clone, Copy, Debug)]
pub struct TfamOutput {
    /// `[B, D_m, h, w]` after the gate.
    pub fused: Var,
    /// `[B, D_m, h, w]` attention plus residual, before the gate.
    pub attended: Var,
    pub gate: Var,
    pub trace: AttentionTrace,
}

#[derive(Clone, Debug)]
pub struct Tfam {
    pub cross: CrossAttentionBlock,
    pub gate: SpatialGate,
}

impl Tfam {
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        cfg: &ModelConfig,
        scale: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let name = format!("tfam.scale{scale}");
        let d_in = 2 * cfg.d_a;
        let k = cfg.gate_kernel;
        Ok(Self {
            cross: CrossAttentionBlock {
                norm: LayerNorm::new(store, &format!("{name}.norm"), d_in)?,
                attn: MultiHeadAttention::new(store, &format!("{name}.mca"), d_in, cfg.d_t, cfg.d_m, cfg.n_h, rng)?,
                residual: Linear::new(store, &format!("{name}.residual"), d_in, cfg.d_m, true, rng)?,
            },
            gate: SpatialGate {
                conv: Conv2d::new(store, &format!("{name}.gate"), cfg.d_m, 1, k, 1, k / 2, true, rng)?,
            },
        })
    }

    /// Visual tokens of `f_v: [B, 2·D_a, h, w]` attend over `words:
    /// [B, L, d_t]`; returns the `[B, D_m, h, w]` grid before gating.
    pub fn cross_attend<T: Real>(
        &self,
        g: &mut Graph<'_, T>,
        f_v: Var,
        words: Var,
        mask: Option<&Tensor<T>>,
    ) -> Result<(Var, AttentionTrace)> {
        let (h, w) = (g.shape(f_v)[2], g.shape(f_v)[3]);
        let tokens = grid_to_tokens(g, f_v)?;
        let q = self.cross.norm.forward(g, tokens)?;
        let (att, trace) = self.cross.attn.forward(g, q, words, mask)?;
        let res = self.cross.residual.forward(g, tokens)?;
        let sum = g.add(att, res)?;
        Ok((tokens_to_grid(g, sum, h, w)?, trace))
    }

    pub fn forward<T: Real>(
        &self,
        g: &mut Graph<'_, T>,
        f_v: Var,
        words: Var,
        mask: Option<&Tensor<T>>,
    ) -> Result<TfamOutput> {
        let (attended, trace) = self.cross_attend(g, f_v, words, mask)?;
        let (fused, gate) = self.gate.forward(g, attended)?;
        Ok(TfamOutput {
            fused,
            attended,
            gate,
            trace,
        })
    }
}

/// Per-position attention strength: the scaled scores averaged over heads
/// and the sample's valid words, min-max normalised per sample into [0, 1].
///
/// `scores: [B, heads, h·w, L]`. Scores are used rather than softmax
/// weights, which are identically 1 for single-word prompts.
pub fn attention_heatmap<T: Real>(scores: &Tensor<T>, lengths: &[usize], h: usize, w: usize) -> Vec<Vec<f64>> {
    let s = scores.shape();
    let (b, heads, n, l) = (s[0], s[1], s[2], s[3]);
    debug_assert_eq!(n, h * w);
    let data = scores.data();
    (0..b)
        .map(|bi| {
            let valid = lengths[bi].min(l);
            let mut m = vec![0.0; n];
            for hd in 0..heads {
                for (p, acc) in m.iter_mut().enumerate() {
                    let row = ((bi * heads + hd) * n + p) * l;
                    *acc += data[row..row + valid].iter().map(|v| v.to_f64().unwrap_or(0.0)).sum::<f64>();
                }
            }
            let denom = (heads * valid) as f64;
            m.iter_mut().for_each(|v| *v /= denom);
            normalise(&mut m);
            m
        })
        .collect()
}

/// Min-max scales into [0, 1]; a constant map becomes all zeros.
pub fn normalise(m: &mut [f64]) {
    let lo = m.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = m.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    for v in m.iter_mut() {
        *v = if span > 0.0 { (*v - lo) / span } else { 0.0 };
    }
}
