//! The full change detector: encoders, adapters, fusion, decoder and heads.

use lgcd_tensor::{Graph, ParamId, ParamStore, Real, Var};
use rand::Rng;

use crate::adapters::AdapterStack;
use crate::config::{ModelConfig, LEVELS, NUM_MAPS};
use crate::encoders::{FeaturePyramid, ImageEncoder, TextEmbedding, TextEncoder, ENCODER_PREFIX};
use crate::error::{Error, Result};
use crate::tfam::{grid_to_tokens, Tfam, TfamOutput};
use crate::vsfd::{
    decoded_grid, similarity_logits, to_probability, tokenize_scale, FpnIntegrator, LanguagePath,
    ScaleDecoderBlock, SegmentationHeads,
};

#[derive(Clone, Debug)]
pub struct ChangeDetector {
    pub cfg: ModelConfig,
    pub vocab_size: usize,
    pub image_encoder: ImageEncoder,
    pub text_encoder: TextEncoder,
    pub adapters: AdapterStack,
    pub tfam: Vec<Tfam>,
    pub decoders: Vec<ScaleDecoderBlock>,
    pub fpn: FpnIntegrator,
    pub language: LanguagePath,
    pub heads: SegmentationHeads,
    /// Any encoder parameter; its frozen flag stands for the whole encoder.
    probe: ParamId,
}

/// Everything the forward pass produces. Maps are ordered: four per-scale
/// heads (finest first), the FPN head, then the language-similarity head,
/// which is the final prediction.
#[derive(Clone, Debug)]
pub struct Prediction {
    pub maps: [Var; NUM_MAPS],
    /// Similarity logits before sigmoid and upsampling, `[B, 1, H/4, W/4]`.
    pub response: Var,
    pub pyramid: FeaturePyramid,
    pub fused: [Var; LEVELS],
    pub tfam: Vec<TfamOutput>,
    /// Decoder outputs on their grids, `[B, D_m, h_i, w_i]`.
    pub decoded: Vec<Var>,
    pub f_v: Var,
    pub f_l: Var,
    pub text: TextEmbedding,
}

impl Prediction {
    pub fn final_map(&self) -> Var {
        self.maps[NUM_MAPS - 1]
    }
}

impl ChangeDetector {
    /// Registers every parameter in `store` (names are unique per model).
    pub fn new<T: Real, R: Rng + ?Sized>(
        cfg: &ModelConfig,
        vocab_size: usize,
        store: &mut ParamStore<T>,
        rng: &mut R,
    ) -> Result<Self> {
        cfg.validate()?;
        let image_encoder = ImageEncoder::new(store, cfg, rng)?;
        let text_encoder = TextEncoder::new(store, cfg, vocab_size, rng)?;
        let adapters = AdapterStack::new(store, cfg, rng)?;
        let tfam = (0..LEVELS)
            .map(|i| Tfam::new(store, cfg, i, rng))
            .collect::<Result<_>>()?;
        let decoders = (0..LEVELS)
            .map(|i| ScaleDecoderBlock::new(store, cfg, i, rng))
            .collect::<Result<_>>()?;
        let fpn = FpnIntegrator::new(store, cfg, rng)?;
        let language = LanguagePath::new(store, cfg, rng)?;
        let heads = SegmentationHeads::new(store, cfg, rng)?;
        let probe = store
            .params()
            .find(|(_, p)| p.name.starts_with(ENCODER_PREFIX))
            .map(|(id, _)| id)
            .expect("encoder registers parameters");
        Ok(Self {
            cfg: cfg.clone(),
            vocab_size,
            image_encoder,
            text_encoder,
            adapters,
            tfam,
            decoders,
            fpn,
            language,
            heads,
            probe,
        })
    }

    /// Freezes or unfreezes both encoders. Frozen encoders also keep their
    /// batch-norm layers on running statistics during training.
    pub fn set_encoder_frozen<T: Real>(&self, store: &mut ParamStore<T>, frozen: bool) -> usize {
        store.set_frozen_prefix(ENCODER_PREFIX, frozen)
    }

    pub fn encoder_frozen<T: Real>(&self, store: &ParamStore<T>) -> bool {
        store.is_frozen(self.probe)
    }

    /// `img_a`, `img_b: [B, 3, H, W]`; one token sequence per sample.
    pub fn forward<T: Real>(
        &self,
        g: &mut Graph<'_, T>,
        img_a: Var,
        img_b: Var,
        prompts: &[Vec<usize>],
    ) -> Result<Prediction> {
        let (sa, sb) = (g.shape(img_a).to_vec(), g.shape(img_b).to_vec());
        if sa != sb {
            return Err(Error::TemporalPair { level: 0, a: sa, b: sb });
        }
        if sa.len() != 4 {
            return Err(Error::Config(format!("expected [B, 3, H, W] images, got {sa:?}")));
        }
        self.cfg.check_input(sa[2], sa[3])?;
        if prompts.len() != sa[0] {
            return Err(Error::Usage(format!(
                "{} prompts for a batch of {}",
                prompts.len(),
                sa[0]
            )));
        }
        if let Some(bad) = prompts.iter().flatten().find(|&&id| id == 0 || id >= self.vocab_size) {
            return Err(Error::Prompt(format!("token id {bad} is outside the vocabulary")));
        }
        let (h, w) = (sa[2], sa[3]);
        let train = g.is_training();
        let encoder_stats = train && !self.encoder_frozen(g.store());

        let both = g.concat(&[img_a, img_b], 0)?;
        let pyramid = self.image_encoder.forward(g, both, encoder_stats)?;
        let text = self.text_encoder.forward(g, prompts)?;
        let fused = self.adapters.fuse_stacked_levels(g, &pyramid, train)?;

        let word_mask = text.mask::<T>(0);
        let mut tfam = Vec::with_capacity(LEVELS);
        let mut decoded = Vec::with_capacity(LEVELS);
        for i in 0..LEVELS {
            let out = self.tfam[i].forward(g, fused[i], text.words, word_mask.as_ref())?;
            let (gh, gw) = (g.shape(out.fused)[2], g.shape(out.fused)[3]);
            let tokens = tokenize_scale(g, out.fused)?;
            let tokens = self.decoders[i].decode_scale(g, tokens, &text)?;
            decoded.push(decoded_grid(g, tokens, gh, gw)?);
            tfam.push(out);
        }
        let f_v = self.fpn.integrate(g, &decoded)?;
        let v_tokens = grid_to_tokens(g, f_v)?;
        let f_l = self.language.forward(g, text.global, v_tokens)?;

        let mut maps = Vec::with_capacity(NUM_MAPS);
        for (i, head) in self.heads.aux.iter().enumerate() {
            let logits = head.forward(g, decoded[i])?;
            maps.push(to_probability(g, logits, h, w)?);
        }
        let logits = self.heads.fpn.forward(g, f_v)?;
        maps.push(to_probability(g, logits, h, w)?);
        let response = similarity_logits(g, f_v, f_l)?;
        maps.push(to_probability(g, response, h, w)?);

        Ok(Prediction {
            maps: maps.try_into().expect("six maps"),
            response,
            pyramid,
            fused,
            tfam,
            decoded,
            f_v,
            f_l,
            text,
        })
    }
}
