//! Language-guided change detection on bi-temporal image pairs.
//!
//! A shared convolutional encoder turns both images into four-level feature
//! pyramids; per-scale adapters fuse the two time steps; text fusion
//! attention injects prompt words at every scale; the decoder mixes visual
//! and word tokens, integrates scales with an FPN and scores every position
//! against a prompt-conditioned language embedding.

pub mod adapters;
pub mod attention;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod encoders;
mod error;
pub mod gradcheck;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod tfam;
pub mod train;
pub mod vocab;
pub mod vsfd;

pub use config::{LossConfig, ModelConfig};
pub use error::{Error, Result};
pub use model::{ChangeDetector, Prediction};
pub use vocab::Vocabulary;
