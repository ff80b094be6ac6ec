//! Image and text encoders.
//!
//! The image encoder is a small convolutional pyramid (stem of two stride-2
//! convolutions, then three stride-2 stages) producing four levels at strides
//! 4, 8, 16 and 32. The text encoder embeds prompt tokens, prepends a learned
//! classifier token and runs a few pre-norm transformer layers; the
//! classifier token's output is the global embedding and the remaining rows
//! are the word embeddings.

use lgcd_tensor::nn::{BatchNorm2d, Conv2d, LayerNorm, Linear};
use lgcd_tensor::{init, Graph, ParamStore, Real, Tensor, Var};
use rand::Rng;

use crate::attention::{key_mask, MultiHeadAttention};
use crate::config::{ModelConfig, LEVELS};
use crate::error::{Error, Result};

/// Parameter-name prefix shared by both encoders; freezing it freezes both.
pub const ENCODER_PREFIX: &str = "encoder.";

#[derive(Clone, Debug)]
struct ConvBnRelu {
    conv: Conv2d,
    bn: BatchNorm2d,
}

impl ConvBnRelu {
    #[allow(clippy::too_many_arguments)]
    fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        cin: usize,
        cout: usize,
        stride: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Self {
            conv: Conv2d::new(store, &format!("{name}.conv"), cin, cout, 3, stride, 1, false, rng)?,
            bn: BatchNorm2d::new(store, &format!("{name}.bn"), cout)?,
        })
    }

    fn forward<T: Real>(&self, g: &mut Graph<'_, T>, x: Var, batch_stats: bool) -> Result<Var> {
        let y = self.conv.forward(g, x)?;
        let y = self.bn.forward(g, y, batch_stats)?;
        Ok(g.relu(y))
    }
}

/// Four feature maps, finest first: level `i` has stride `2^(i+2)` and
/// `base·2^i` channels.
#[derive(Clone, Copy, Debug)]
pub struct FeaturePyramid {
    pub levels: [Var; LEVELS],
}

#[derive(Clone, Debug)]
pub struct ImageEncoder {
    stem: [ConvBnRelu; 2],
    stages: Vec<[ConvBnRelu; 2]>,
}

impl ImageEncoder {
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        cfg: &ModelConfig,
        rng: &mut R,
    ) -> Result<Self> {
        let p = format!("{ENCODER_PREFIX}image");
        let c0 = cfg.channels(0);
        let mid = (c0 / 2).max(1);
        let stem = [
            ConvBnRelu::new(store, &format!("{p}.stem0"), 3, mid, 2, rng)?,
            ConvBnRelu::new(store, &format!("{p}.stem1"), mid, c0, 2, rng)?,
        ];
        let mut stages = Vec::with_capacity(LEVELS - 1);
        for i in 1..LEVELS {
            let (cin, cout) = (cfg.channels(i - 1), cfg.channels(i));
            stages.push([
                ConvBnRelu::new(store, &format!("{p}.stage{i}.0"), cin, cout, 2, rng)?,
                ConvBnRelu::new(store, &format!("{p}.stage{i}.1"), cout, cout, 1, rng)?,
            ]);
        }
        Ok(Self { stem, stages })
    }

    /// `img: [B, 3, H, W]` with `H`, `W` multiples of 32.
    pub fn forward<T: Real>(
        &self,
        g: &mut Graph<'_, T>,
        img: Var,
        batch_stats: bool,
    ) -> Result<FeaturePyramid> {
        let s = g.shape(img).to_vec();
        if s.len() != 4 || s[1] != 3 {
            return Err(Error::Config(format!("expected an image batch [B, 3, H, W], got {s:?}")));
        }
        if s[2] % 32 != 0 || s[3] % 32 != 0 {
            return Err(Error::Config(format!(
                "image size {}x{} is not divisible by 32",
                s[2], s[3]
            )));
        }
        let mut x = img;
        for layer in &self.stem {
            x = layer.forward(g, x, batch_stats)?;
        }
        let mut levels = [x; LEVELS];
        for (i, stage) in self.stages.iter().enumerate() {
            for layer in stage {
                x = layer.forward(g, x, batch_stats)?;
            }
            levels[i + 1] = x;
        }
        Ok(FeaturePyramid { levels })
    }
}

/// Word and global text embeddings for a batch of prompts.
#[derive(Clone, Debug)]
pub struct TextEmbedding {
    /// `[B, L, d_t]`; rows past a sample's length are padding.
    pub words: Var,
    /// `[B, d_t]`, taken from the classifier token.
    pub global: Var,
    /// Token count of each prompt.
    pub lengths: Vec<usize>,
    /// Padded length `L`.
    pub max_len: usize,
}

impl TextEmbedding {
    /// Additive mask hiding padded word keys, with `prefix` always-visible
    /// keys in front of the words.
    pub fn mask<T: Real>(&self, prefix: usize) -> Option<Tensor<T>> {
        key_mask(&self.lengths, self.max_len, prefix)
    }
}

#[derive(Clone, Debug)]
struct TextLayer {
    ln1: LayerNorm,
    attn: MultiHeadAttention,
    ln2: LayerNorm,
    fc1: Linear,
    fc2: Linear,
}

#[derive(Clone, Debug)]
pub struct TextEncoder {
    token_embed: lgcd_tensor::ParamId,
    pos_embed: lgcd_tensor::ParamId,
    cls: lgcd_tensor::ParamId,
    layers: Vec<TextLayer>,
    final_norm: LayerNorm,
    max_len: usize,
}

impl TextEncoder {
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        cfg: &ModelConfig,
        vocab_size: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let p = format!("{ENCODER_PREFIX}text");
        let d = cfg.d_t;
        let token_embed = store.add_param(format!("{p}.token_embed"), init::normal([vocab_size, d], 1.0, rng))?;
        let pos_embed = store.add_param(
            format!("{p}.pos_embed"),
            init::normal([cfg.max_prompt_len + 1, d], 0.5, rng),
        )?;
        let cls = store.add_param(format!("{p}.cls"), init::normal([1, d], 1.0, rng))?;
        let mut layers = Vec::with_capacity(cfg.text_layers);
        for l in 0..cfg.text_layers {
            let n = format!("{p}.layer{l}");
            layers.push(TextLayer {
                ln1: LayerNorm::new(store, &format!("{n}.ln1"), d)?,
                attn: MultiHeadAttention::new(store, &format!("{n}.attn"), d, d, d, cfg.text_heads, rng)?,
                ln2: LayerNorm::new(store, &format!("{n}.ln2"), d)?,
                fc1: Linear::new(store, &format!("{n}.fc1"), d, 2 * d, true, rng)?,
                fc2: Linear::new(store, &format!("{n}.fc2"), 2 * d, d, true, rng)?,
            });
        }
        Ok(Self {
            token_embed,
            pos_embed,
            cls,
            layers,
            final_norm: LayerNorm::plain(),
            max_len: cfg.max_prompt_len,
        })
    }

    /// Encodes a batch of token-id sequences (padding id 0 is appended to
    /// shorter prompts internally).
    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, prompts: &[Vec<usize>]) -> Result<TextEmbedding> {
        let b = prompts.len();
        if b == 0 {
            return Err(Error::Prompt("empty prompt batch".into()));
        }
        let lengths: Vec<usize> = prompts.iter().map(Vec::len).collect();
        let l = *lengths.iter().max().expect("non-empty");
        if lengths.contains(&0) || l > self.max_len {
            return Err(Error::Prompt(format!(
                "prompt lengths {lengths:?} must lie in 1..={}",
                self.max_len
            )));
        }
        let ids: Vec<usize> = prompts
            .iter()
            .flat_map(|p| p.iter().copied().chain(std::iter::repeat_n(0, l - p.len())))
            .collect();

        let table = g.param(self.token_embed);
        let words = g.gather_rows(table, &ids)?;
        let words = g.reshape(words, [b, l, g.shape(table)[1]])?;
        let d = g.shape(words)[2];
        let cls = g.param(self.cls);
        let cls = g.gather_rows(cls, &vec![0; b])?;
        let cls = g.reshape(cls, [b, 1, d])?;
        let x = g.concat(&[cls, words], 1)?;
        let pos = g.param(self.pos_embed);
        let pos = g.narrow(pos, 0, 0, l + 1)?;
        let mut x = g.add(x, pos)?;

        let mask = key_mask::<T>(&lengths, l, 1);
        for layer in &self.layers {
            let h = layer.ln1.forward(g, x)?;
            let (a, _) = layer.attn.forward(g, h, h, mask.as_ref())?;
            x = g.add(x, a)?;
            let h = layer.ln2.forward(g, x)?;
            let h = layer.fc1.forward(g, h)?;
            let h = g.relu(h);
            let h = layer.fc2.forward(g, h)?;
            x = g.add(x, h)?;
        }
        let x = self.final_norm.forward(g, x)?;
        let global = g.narrow(x, 1, 0, 1)?;
        let global = g.reshape(global, [b, d])?;
        let words = g.narrow(x, 1, 1, l)?;
        Ok(TextEmbedding {
            words,
            global,
            lengths,
            max_len: l,
        })
    }
}
