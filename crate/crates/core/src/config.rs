//! Model and loss hyperparameters.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Pyramid levels produced by the image encoder, at strides 4, 8, 16, 32.
pub const LEVELS: usize = 4;

/// Number of probability maps the model emits (four per-scale heads, the
/// FPN head and the language-similarity head).
pub const NUM_MAPS: usize = 6;

/// Input sides must be multiples of the coarsest stride.
pub const SIZE_MULTIPLE: usize = 32;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Channels at stride 4; level `i` has `base << i`.
    pub base: usize,
    /// Adapter output width per temporal image.
    pub d_a: usize,
    /// Width of the fused visual features and every attention block.
    pub d_m: usize,
    /// Attention heads in the fusion and decoder blocks.
    pub n_h: usize,
    /// Text embedding width.
    pub d_t: usize,
    pub text_layers: usize,
    pub text_heads: usize,
    /// Longest accepted prompt, in tokens.
    pub max_prompt_len: usize,
    /// Gate convolution kernel size.
    pub gate_kernel: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            base: 16,
            d_a: 64,
            d_m: 128,
            n_h: 4,
            d_t: 64,
            text_layers: 2,
            text_heads: 4,
            max_prompt_len: 8,
            gate_kernel: 7,
        }
    }
}

impl ModelConfig {
    /// Smallest configuration that still exercises every block; used for
    /// finite-difference checks.
    pub fn tiny() -> Self {
        Self {
            base: 8,
            d_a: 8,
            d_m: 16,
            n_h: 2,
            d_t: 8,
            text_layers: 2,
            text_heads: 2,
            max_prompt_len: 8,
            gate_kernel: 7,
        }
    }

    pub fn channels(&self, level: usize) -> usize {
        self.base << level
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.base == 0 || self.d_a == 0 || self.d_m == 0 || self.d_t == 0 {
            return bad("widths must be positive".into());
        }
        if self.n_h == 0 || self.d_m % self.n_h != 0 {
            return bad(format!("d_m = {} is not divisible by n_h = {}", self.d_m, self.n_h));
        }
        if self.text_heads == 0 || self.d_t % self.text_heads != 0 {
            return bad(format!(
                "d_t = {} is not divisible by text_heads = {}",
                self.d_t, self.text_heads
            ));
        }
        if self.d_m % 4 != 0 {
            return bad(format!("d_m = {} must be a multiple of 4 for 2-D positions", self.d_m));
        }
        if self.max_prompt_len == 0 {
            return bad("max_prompt_len must be at least 1".into());
        }
        if self.gate_kernel % 2 == 0 {
            return bad(format!("gate_kernel = {} must be odd", self.gate_kernel));
        }
        Ok(())
    }

    /// Checks that an `h × w` input fits the stride schedule.
    pub fn check_input(&self, h: usize, w: usize) -> Result<()> {
        if h == 0 || w == 0 || h % SIZE_MULTIPLE != 0 || w % SIZE_MULTIPLE != 0 {
            return Err(Error::Config(format!(
                "input {h}x{w} is not a positive multiple of {SIZE_MULTIPLE}"
            )));
        }
        Ok(())
    }
}

/// Weights of the composite segmentation loss.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    /// IoU loss weight.
    pub alpha: f64,
    /// Dice loss weight.
    pub beta: f64,
    /// Smoothing added to numerator and denominator of IoU and Dice.
    pub epsilon: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            alpha: 0.2,
            beta: 0.1,
            epsilon: 1.0,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.beta >= 0.0) {
            return Err(Error::Config(format!(
                "loss weights must be non-negative (alpha = {}, beta = {})",
                self.alpha, self.beta
            )));
        }
        if self.alpha + self.beta >= 1.0 {
            return Err(Error::Config(format!(
                "alpha + beta must be below 1 (got {})",
                self.alpha + self.beta
            )));
        }
        if !(self.epsilon >= 0.0) {
            return Err(Error::Config(format!("epsilon must be non-negative (got {})", self.epsilon)));
        }
        Ok(())
    }

    /// `(cross-entropy, IoU, Dice)` weights.
    pub fn weights(&self) -> (f64, f64, f64) {
        (1.0 - self.alpha - self.beta, self.alpha, self.beta)
    }
}
