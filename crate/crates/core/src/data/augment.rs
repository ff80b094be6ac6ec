use lgcd_tensor::Tensor;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::BiTemporalPair;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    /// Random square crop side; `None` keeps the full image.
    pub crop: Option<usize>,
    pub hflip: f64,
    pub vflip: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            crop: None,
            hflip: 0.5,
            vflip: 0.5,
        }
    }
}

impl AugmentConfig {
    pub fn identity() -> Self {
        Self {
            crop: None,
            hflip: 0.0,
            vflip: 0.0,
        }
    }
}

fn map_planes(t: &Tensor<f32>, f: impl Fn(&[f32], usize, usize) -> Vec<f32>, out_hw: (usize, usize)) -> Tensor<f32> {
    let s = t.shape();
    let (c, h, w) = (s[0], s[1], s[2]);
    let data = t.data().chunks(h * w).flat_map(|plane| f(plane, h, w)).collect();
    Tensor::new([c, out_hw.0, out_hw.1], data).expect("plane sizes")
}

fn apply(pair: &BiTemporalPair, out_hw: (usize, usize), f: impl Fn(&[f32], usize, usize) -> Vec<f32> + Copy) -> BiTemporalPair {
    BiTemporalPair {
        img_a: map_planes(&pair.img_a, f, out_hw),
        img_b: map_planes(&pair.img_b, f, out_hw),
        mask: map_planes(&pair.mask, f, out_hw),
        ..pair.clone()
    }
}

/// Mirrors left-right.
pub fn hflip(pair: &BiTemporalPair) -> BiTemporalPair {
    let hw = (pair.height(), pair.width());
    apply(pair, hw, |p, h, w| (0..h * w).map(|i| p[(i / w) * w + (w - 1 - i % w)]).collect())
}

/// Mirrors top-bottom.
pub fn vflip(pair: &BiTemporalPair) -> BiTemporalPair {
    let hw = (pair.height(), pair.width());
    apply(pair, hw, |p, h, w| (0..h * w).map(|i| p[(h - 1 - i / w) * w + i % w]).collect())
}

/// Cuts the `size × size` window at `(top, left)` from all three rasters.
pub fn crop(pair: &BiTemporalPair, top: usize, left: usize, size: usize) -> Result<BiTemporalPair> {
    if size == 0 || size % 32 != 0 {
        return Err(Error::Config(format!("crop size {size} is not a positive multiple of 32")));
    }
    if top + size > pair.height() || left + size > pair.width() {
        return Err(Error::Config(format!(
            "crop {size} at ({top}, {left}) exceeds {}x{}",
            pair.height(),
            pair.width()
        )));
    }
    Ok(apply(pair, (size, size), |p, _, w| {
        (0..size * size).map(|i| p[(top + i / size) * w + left + i % size]).collect()
    }))
}

/// Random crop then random flips, applied identically to both images and
/// the mask.
pub fn augment<R: Rng + ?Sized>(pair: &BiTemporalPair, cfg: &AugmentConfig, rng: &mut R) -> Result<BiTemporalPair> {
    let mut out = match cfg.crop {
        Some(size) => {
            if size > pair.height() || size > pair.width() {
                return Err(Error::Config(format!(
                    "crop size {size} exceeds image {}x{}",
                    pair.height(),
                    pair.width()
                )));
            }
            let top = rng.gen_range(0..=pair.height() - size);
            let left = rng.gen_range(0..=pair.width() - size);
            crop(pair, top, left, size)?
        }
        None => pair.clone(),
    };
    if cfg.hflip > 0.0 && rng.gen_bool(cfg.hflip.min(1.0)) {
        out = hflip(&out);
    }
    if cfg.vflip > 0.0 && rng.gen_bool(cfg.vflip.min(1.0)) {
        out = vflip(&out);
    }
    Ok(out)
}

/// Window origins covering `h × w` with the given stride; the last window
/// on each axis is aligned to the far edge.
pub fn sliding_windows(h: usize, w: usize, window: usize, stride: usize) -> Vec<(usize, usize)> {
    let axis = |n: usize| -> Vec<usize> {
        if n <= window {
            return vec![0];
        }
        let mut v: Vec<usize> = (0..=n - window).step_by(stride.max(1)).collect();
        if *v.last().expect("non-empty") != n - window {
            v.push(n - window);
        }
        v
    };
    let (ys, xs) = (axis(h), axis(w));
    ys.iter().flat_map(|&y| xs.iter().map(move |&x| (y, x))).collect()
}
