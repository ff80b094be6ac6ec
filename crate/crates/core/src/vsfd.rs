//! Vision-semantic fusion decoder: per-scale token mixing with the words,
//! FPN integration, the language path and the prediction heads.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use lgcd_tensor::nn::{Conv2d, LayerNorm, Linear};
use lgcd_tensor::{Graph, ParamStore, Real, Tensor, Var};
use rand::Rng;

use crate::attention::MultiHeadAttention;
use crate::config::{ModelConfig, LEVELS};
use crate::encoders::TextEmbedding;
use crate::error::{Error, Result};
use crate::tfam::{grid_to_tokens, tokens_to_grid};

/// Decision threshold on probabilities; ties count as change.
pub const THRESHOLD: f64 = 0.5;

type PosKey = (usize, usize, usize);

/// 2-D sinusoidal table `[h·w, d]` in row-major position order. The first
/// `d/2` channels encode the row and the rest the column, each as
/// interleaved `sin`/`cos` pairs over `d/4` geometric frequencies.
///
/// Tables are computed once per `(h, w, d)` and shared.
pub fn positional_table(h: usize, w: usize, d: usize) -> Arc<Vec<f64>> {
    static CACHE: OnceLock<Mutex<HashMap<PosKey, Arc<Vec<f64>>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(Default::default);
    let mut map = cache.lock().expect("positional cache poisoned");
    map.entry((h, w, d)).or_insert_with(|| Arc::new(sincos_2d(h, w, d))).clone()
}

fn sincos_2d(h: usize, w: usize, d: usize) -> Vec<f64> {
    assert!(d % 4 == 0, "positional width must be a multiple of 4");
    let quarter = d / 4;
    let freq: Vec<f64> = (0..quarter)
        .map(|k| 1.0 / 10000f64.powf(k as f64 / quarter as f64))
        .collect();
    let mut out = vec![0.0; h * w * d];
    for r in 0..h {
        for c in 0..w {
            let row = &mut out[(r * w + c) * d..(r * w + c + 1) * d];
            for (k, f) in freq.iter().enumerate() {
                row[2 * k] = (r as f64 * f).sin();
                row[2 * k + 1] = (r as f64 * f).cos();
                row[d / 2 + 2 * k] = (c as f64 * f).sin();
                row[d / 2 + 2 * k + 1] = (c as f64 * f).cos();
            }
        }
    }
    out
}

/// Flattens `f: [B, D_m, h, w]` into `[B, h·w, D_m]` and adds positions.
pub fn tokenize_scale<T: Real>(g: &mut Graph<'_, T>, f: Var) -> Result<Var> {
    let s = g.shape(f).to_vec();
    let pos = positional_table(s[2], s[3], s[1]);
    let pos = Tensor::new([s[2] * s[3], s[1]], pos.iter().map(|&v| T::lit(v)).collect())?;
    let pos = g.constant(pos);
    let tokens = grid_to_tokens(g, f)?;
    Ok(g.add(tokens, pos)?)
}

#[derive(Clone, Debug)]
pub struct ScaleDecoderBlock {
    pub word_proj: Linear,
    pub msa_norm: LayerNorm,
    pub msa: MultiHeadAttention,
    pub mca_norm: LayerNorm,
    pub mca: MultiHeadAttention,
}

impl ScaleDecoderBlock {
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        cfg: &ModelConfig,
        scale: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let n = format!("vsfd.scale{scale}");
        let d = cfg.d_m;
        Ok(Self {
            word_proj: Linear::new(store, &format!("{n}.word_proj"), cfg.d_t, d, true, rng)?,
            msa_norm: LayerNorm::new(store, &format!("{n}.msa_norm"), d)?,
            msa: MultiHeadAttention::new(store, &format!("{n}.msa"), d, d, d, cfg.n_h, rng)?,
            mca_norm: LayerNorm::new(store, &format!("{n}.mca_norm"), d)?,
            mca: MultiHeadAttention::new(store, &format!("{n}.mca"), d, cfg.d_t, d, cfg.n_h, rng)?,
        })
    }

    /// `tokens: [B, N, D_m]` (positions already added). Self-attention runs
    /// over the visual tokens joined with the projected words, the word
    /// outputs are dropped, and the visual tokens then cross-attend to the
    /// words. Returns `[B, N, D_m]`.
    pub fn decode_scale<T: Real>(&self, g: &mut Graph<'_, T>, tokens: Var, text: &TextEmbedding) -> Result<Var> {
        let n = g.shape(tokens)[1];
        let words = self.word_proj.forward(g, text.words)?;
        let joint = g.concat(&[tokens, words], 1)?;
        let h = self.msa_norm.forward(g, joint)?;
        let (a, _) = self.msa.forward(g, h, h, text.mask::<T>(n).as_ref())?;
        let joint = g.add(joint, a)?;
        let visual = g.narrow(joint, 1, 0, n)?;
        let h = self.mca_norm.forward(g, visual)?;
        let (a, _) = self.mca.forward(g, h, text.words, text.mask::<T>(0).as_ref())?;
        Ok(g.add(visual, a)?)
    }
}

/// Top-down feature pyramid: lateral 1×1 convolutions, ×2 bilinear
/// upsampling with addition, and a 3×3 smoothing convolution after every
/// merge.
#[derive(Clone, Debug)]
pub struct FpnIntegrator {
    pub laterals: Vec<Conv2d>,
    /// Smoothing for levels 0..3 (the coarsest level is not merged).
    pub smooth: Vec<Conv2d>,
}

impl FpnIntegrator {
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        cfg: &ModelConfig,
        rng: &mut R,
    ) -> Result<Self> {
        let d = cfg.d_m;
        let laterals = (0..LEVELS)
            .map(|i| Conv2d::new(store, &format!("fpn.lateral{i}"), d, d, 1, 1, 0, true, rng))
            .collect::<lgcd_tensor::Result<_>>()?;
        let smooth = (0..LEVELS - 1)
            .map(|i| Conv2d::new(store, &format!("fpn.smooth{i}"), d, d, 3, 1, 1, true, rng))
            .collect::<lgcd_tensor::Result<_>>()?;
        Ok(Self { laterals, smooth })
    }

    /// `grids[i]: [B, D_m, H/2^(i+2), W/2^(i+2)]`; returns the stride-4 map.
    pub fn integrate<T: Real>(&self, g: &mut Graph<'_, T>, grids: &[Var]) -> Result<Var> {
        if grids.len() != LEVELS {
            return Err(Error::Decoder(format!(
                "FPN needs {LEVELS} scales, got {}",
                grids.len()
            )));
        }
        let mut p = self.laterals[LEVELS - 1].forward(g, grids[LEVELS - 1])?;
        for i in (0..LEVELS - 1).rev() {
            let lat = self.laterals[i].forward(g, grids[i])?;
            let (h, w) = (g.shape(lat)[2], g.shape(lat)[3]);
            let up = g.bilinear_resize(p, h, w)?;
            let merged = g.add(up, lat)?;
            p = self.smooth[i].forward(g, merged)?;
        }
        Ok(p)
    }
}

/// The global text embedding queries the integrated visual tokens; the
/// projected query and the cross-attention result then attend to each other
/// and the latter becomes the language embedding `f_L`.
#[derive(Clone, Debug)]
pub struct LanguagePath {
    pub w_g: Linear,
    pub mca: MultiHeadAttention,
    pub msa_norm: LayerNorm,
    pub msa: MultiHeadAttention,
}

impl LanguagePath {
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        cfg: &ModelConfig,
        rng: &mut R,
    ) -> Result<Self> {
        let d = cfg.d_m;
        Ok(Self {
            w_g: Linear::new(store, "language.w_g", cfg.d_t, d, true, rng)?,
            mca: MultiHeadAttention::new(store, "language.mca", d, d, d, cfg.n_h, rng)?,
            msa_norm: LayerNorm::new(store, "language.msa_norm", d)?,
            msa: MultiHeadAttention::new(store, "language.msa", d, d, d, cfg.n_h, rng)?,
        })
    }

    /// Cross-attention output alone: `f_g: [B, d_t]`, `f_v: [B, N, D_m]` to
    /// `[B, 1, D_m]`.
    pub fn attend_visual<T: Real>(&self, g: &mut Graph<'_, T>, f_g: Var, f_v: Var) -> Result<(Var, Var)> {
        let (b, d) = (g.shape(f_g)[0], g.shape(f_g)[1]);
        let q = g.reshape(f_g, [b, 1, d])?;
        let q = self.w_g.forward(g, q)?;
        let (c, _) = self.mca.forward(g, q, f_v, None)?;
        Ok((q, c))
    }

    /// Returns `f_L: [B, D_m]`.
    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, f_g: Var, f_v: Var) -> Result<Var> {
        let (q, c) = self.attend_visual(g, f_g, f_v)?;
        let pair = g.concat(&[q, c], 1)?;
        let h = self.msa_norm.forward(g, pair)?;
        let (a, _) = self.msa.forward(g, h, h, None)?;
        let pair = g.add(pair, a)?;
        let f_l = g.narrow(pair, 1, 1, 1)?;
        let s = g.shape(f_l).to_vec();
        Ok(g.reshape(f_l, [s[0], s[2]])?)
    }
}

/// Similarity logits `⟨f_V(x, y), f_L⟩ / sqrt(D_m)` as `[B, 1, h, w]`.
pub fn similarity_logits<T: Real>(g: &mut Graph<'_, T>, f_v: Var, f_l: Var) -> Result<Var> {
    let s = g.shape(f_v).to_vec();
    let (b, d, h, w) = (s[0], s[1], s[2], s[3]);
    let tokens = grid_to_tokens(g, f_v)?;
    let q = g.reshape(f_l, [b, 1, d])?;
    let sim = g.matmul_nt(tokens, q)?; // [B, hw, 1]
    let sim = g.mul_scalar(sim, 1.0 / (d as f64).sqrt());
    Ok(g.reshape(sim, [b, 1, h, w])?)
}

/// Sigmoid, then bilinear upsampling to the input size.
pub fn to_probability<T: Real>(g: &mut Graph<'_, T>, logits: Var, h: usize, w: usize) -> Result<Var> {
    let p = g.sigmoid(logits);
    Ok(g.bilinear_resize(p, h, w)?)
}

/// `1` where `p ≥ 0.5`, else `0`.
pub fn threshold<T: Real>(p: &[T]) -> Vec<u8> {
    let t = T::lit(THRESHOLD);
    p.iter().map(|&v| u8::from(v >= t)).collect()
}

#[derive(Clone, Debug)]
pub struct SegmentationHeads {
    /// One per decoder scale.
    pub aux: Vec<Conv2d>,
    pub fpn: Conv2d,
}

impl SegmentationHeads {
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        cfg: &ModelConfig,
        rng: &mut R,
    ) -> Result<Self> {
        let aux = (0..LEVELS)
            .map(|i| Conv2d::new(store, &format!("head.scale{i}"), cfg.d_m, 1, 1, 1, 0, true, rng))
            .collect::<lgcd_tensor::Result<_>>()?;
        Ok(Self {
            aux,
            fpn: Conv2d::new(store, "head.fpn", cfg.d_m, 1, 1, 1, 0, true, rng)?,
        })
    }
}

/// Reshapes decoder tokens back onto their grid.
pub fn decoded_grid<T: Real>(g: &mut Graph<'_, T>, tokens: Var, h: usize, w: usize) -> Result<Var> {
    tokens_to_grid(g, tokens, h, w)
}
