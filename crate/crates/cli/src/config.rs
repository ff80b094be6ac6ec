//! Run configuration: a JSON file layered under command-line overrides.

use std::path::{Path, PathBuf};

use lgcd_core::data::AugmentConfig;
use lgcd_core::train::TrainConfig;
use lgcd_core::{LossConfig, ModelConfig, Vocabulary};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Training tile side; larger dataset images are randomly cropped.
    pub image_size: usize,
    pub base: usize,
    pub d_a: usize,
    pub d_m: usize,
    pub n_h: usize,
    pub d_t: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub steps: usize,
    pub alpha: f64,
    pub beta: f64,
    pub epsilon: f64,
    pub freeze_encoder: bool,
    pub hflip: f64,
    pub vflip: f64,
    /// Prompt tokens, without the padding token.
    pub vocabulary: Vec<String>,
    pub dataset: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub output: PathBuf,
    /// Print a progress line every this many steps (0 disables).
    pub log_every: usize,
    /// Tile side for sliding-window inference on large images.
    pub window: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let model = ModelConfig::default();
        let loss = LossConfig::default();
        let train = TrainConfig::default();
        Self {
            seed: 0,
            image_size: 64,
            base: model.base,
            d_a: model.d_a,
            d_m: model.d_m,
            n_h: model.n_h,
            d_t: model.d_t,
            lr: train.lr,
            batch_size: train.batch_size,
            steps: train.steps,
            alpha: loss.alpha,
            beta: loss.beta,
            epsilon: loss.epsilon,
            freeze_encoder: false,
            hflip: train.augment.hflip,
            vflip: train.augment.vflip,
            vocabulary: Vocabulary::default().tokens()[1..].to_vec(),
            dataset: None,
            checkpoint: None,
            output: PathBuf::from("runs/default"),
            log_every: 50,
            window: 64,
        }
    }
}

impl RunConfig {
    /// Reads `path`, or returns the defaults when no file is given.
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::config(format!("cannot read {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::config(format!("{}: {e}", path.display())))
    }

    pub fn model(&self) -> ModelConfig {
        ModelConfig {
            base: self.base,
            d_a: self.d_a,
            d_m: self.d_m,
            n_h: self.n_h,
            d_t: self.d_t,
            ..ModelConfig::default()
        }
    }

    pub fn loss(&self) -> LossConfig {
        LossConfig {
            alpha: self.alpha,
            beta: self.beta,
            epsilon: self.epsilon,
        }
    }

    /// Training settings for a dataset of `h × w` images.
    pub fn train(&self, h: usize, w: usize) -> TrainConfig {
        TrainConfig {
            lr: self.lr,
            batch_size: self.batch_size,
            steps: self.steps,
            seed: self.seed,
            freeze_encoder: self.freeze_encoder,
            loss: self.loss(),
            augment: AugmentConfig {
                crop: ((h, w) != (self.image_size, self.image_size)).then_some(self.image_size),
                hflip: self.hflip,
                vflip: self.vflip,
            },
        }
    }

    pub fn vocab(&self) -> Result<Vocabulary, CliError> {
        Vocabulary::new(self.vocabulary.iter().cloned()).map_err(CliError::from)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |msg: String| Err(CliError::config(msg));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if self.image_size == 0 || self.image_size % 32 != 0 {
            return bad(format!("image_size {} is not a positive multiple of 32", self.image_size));
        }
        if self.window == 0 || self.window % 32 != 0 {
            return bad(format!("window {} is not a positive multiple of 32", self.window));
        }
        self.loss().validate()?;
        self.model().validate()?;
        self.train(self.image_size, self.image_size).validate()?;
        self.vocab()?;
        Ok(())
    }

    /// Writes the resolved configuration as `config.json` inside `dir`.
    pub fn echo(&self, dir: &Path) -> Result<(), CliError> {
        let json = serde_json::to_string_pretty(self).expect("config serialises");
        crate::write_file(&dir.join("config.json"), (json + "\n").as_bytes())
    }
}
