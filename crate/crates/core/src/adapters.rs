//! Per-scale adapters (1×1 conv, batch norm, ReLU) shared by both temporal
//! images, followed by channel concatenation of the two adapted streams.

use lgcd_tensor::nn::{BatchNorm2d, Conv2d};
use lgcd_tensor::{Graph, ParamStore, Real, Var};
use rand::Rng;

use crate::config::{ModelConfig, LEVELS};
use crate::encoders::FeaturePyramid;
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct Adapter {
    pub conv: Conv2d,
    pub bn: BatchNorm2d,
}

impl Adapter {
    /// Applies the adapter to `x: [B, C_i, h, w]`.
    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, x: Var, batch_stats: bool) -> Result<Var> {
        let y = self.conv.forward(g, x)?;
        let y = self.bn.forward(g, y, batch_stats)?;
        Ok(g.relu(y))
    }
}

#[derive(Clone, Debug)]
pub struct AdapterStack {
    pub scales: Vec<Adapter>,
    pub d_a: usize,
}

impl AdapterStack {
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        cfg: &ModelConfig,
        rng: &mut R,
    ) -> Result<Self> {
        let scales = (0..LEVELS)
            .map(|i| {
                let name = format!("adapter.scale{i}");
                Ok(Adapter {
                    conv: Conv2d::new(store, &format!("{name}.conv"), cfg.channels(i), cfg.d_a, 1, 1, 0, true, rng)?,
                    bn: BatchNorm2d::new(store, &format!("{name}.bn"), cfg.d_a)?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self { scales, d_a: cfg.d_a })
    }

    /// Scalars in the 1×1 convolution of scale `i` (weights plus bias), not
    /// counting the batch-norm affine pair.
    pub fn conv_params(&self, c_i: usize) -> usize {
        self.d_a * c_i + self.d_a
    }

    /// Adapts both pyramids and concatenates them per level into
    /// `[B, 2·D_a, h_i, w_i]`, first image first.
    ///
    /// Both images go through one batch of `2B`, so batch statistics are
    /// shared between the two streams.
    pub fn adapt_and_fuse<T: Real>(
        &self,
        g: &mut Graph<'_, T>,
        p1: &FeaturePyramid,
        p2: &FeaturePyramid,
        batch_stats: bool,
    ) -> Result<[Var; LEVELS]> {
        let mut out = p1.levels;
        for (i, adapter) in self.scales.iter().enumerate() {
            let (a, b) = (p1.levels[i], p2.levels[i]);
            if g.shape(a) != g.shape(b) {
                return Err(Error::TemporalPair {
                    level: i,
                    a: g.shape(a).to_vec(),
                    b: g.shape(b).to_vec(),
                });
            }
            let both = g.concat(&[a, b], 0)?;
            out[i] = self.fuse_stacked(g, adapter, both, batch_stats)?;
        }
        Ok(out)
    }

    /// Like [`Self::adapt_and_fuse`] for levels that already hold the first
    /// images in the first half of the batch and the second images after.
    pub fn fuse_stacked_levels<T: Real>(
        &self,
        g: &mut Graph<'_, T>,
        stacked: &FeaturePyramid,
        batch_stats: bool,
    ) -> Result<[Var; LEVELS]> {
        let mut out = stacked.levels;
        for (i, adapter) in self.scales.iter().enumerate() {
            out[i] = self.fuse_stacked(g, adapter, stacked.levels[i], batch_stats)?;
        }
        Ok(out)
    }

    fn fuse_stacked<T: Real>(&self, g: &mut Graph<'_, T>, adapter: &Adapter, both: Var, batch_stats: bool) -> Result<Var> {
        let n = g.shape(both)[0];
        if n % 2 != 0 {
            return Err(Error::Usage(format!("stacked batch of {n} is not a temporal pair")));
        }
        let y = adapter.forward(g, both, batch_stats)?;
        let a = g.narrow(y, 0, 0, n / 2)?;
        let b = g.narrow(y, 0, n / 2, n / 2)?;
        Ok(g.concat(&[a, b], 1)?)
    }
}
