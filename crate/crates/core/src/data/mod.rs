//! Synthetic bi-temporal scenes, dataset files and augmentation.

mod augment;
mod io;
mod scene;

pub use augment::{augment, crop, hflip, sliding_windows, vflip, AugmentConfig};
pub use io::{read_dataset, read_gray, read_rgb, write_dataset, write_gray, write_rgb, IndexEntry, INDEX_FILE};
pub use scene::{
    generate_scene, generate_scenes, sample_spec, EventKind, Geometry, ObjectClass, ObjectEvent, SamplerConfig,
    SceneSpec, NO_CHANGE_PROMPT,
};

use lgcd_tensor::Tensor;

/// Two co-registered images and the change mask for one prompt.
#[derive(Clone, Debug, PartialEq)]
pub struct BiTemporalPair {
    pub id: String,
    /// `[3, H, W]` in [0, 1].
    pub img_a: Tensor<f32>,
    pub img_b: Tensor<f32>,
    pub prompt: String,
    /// `[1, H, W]`, 1 where the prompted class changed.
    pub mask: Tensor<f32>,
    pub scene_id: String,
    pub seed: u64,
}

impl BiTemporalPair {
    pub fn height(&self) -> usize {
        self.img_a.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.img_a.shape()[2]
    }

    pub fn mask_u8(&self) -> Vec<u8> {
        self.mask.data().iter().map(|&v| u8::from(v >= 0.5)).collect()
    }

    pub fn change_pixels(&self) -> usize {
        self.mask.data().iter().filter(|&&v| v >= 0.5).count()
    }
}
