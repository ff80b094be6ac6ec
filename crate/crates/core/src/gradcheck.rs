//! Finite-difference checks of the model's modules and the full network.
//!
//! Everything runs in `f64`. Module inputs are registered as parameters so a
//! single [`check_params`] pass covers both weights and inputs.

use lgcd_tensor::gradcheck::{check_params, primitive_suite, CheckReport};
use lgcd_tensor::init::uniform;
use lgcd_tensor::{Graph, ParamId, ParamStore, Tensor, TensorError, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{LossConfig, ModelConfig, LEVELS};
use crate::encoders::TextEmbedding;
use crate::error::Result;
use crate::loss::total_loss;
use crate::model::ChangeDetector;
use crate::tfam::Tfam;
use crate::vsfd::{tokenize_scale, FpnIntegrator, LanguagePath, ScaleDecoderBlock};

/// Tolerance for single primitives and modules.
pub const PRIMITIVE_TOL: f64 = 1e-4;
/// Tolerance for the end-to-end model.
pub const MODEL_TOL: f64 = 1e-3;

/// Settings for the end-to-end check.
#[derive(Clone, Debug)]
pub struct ModelCheck {
    pub cfg: ModelConfig,
    pub size: usize,
    pub batch: usize,
    /// Evenly spaced elements checked per parameter tensor.
    pub per_param: usize,
    pub seed: u64,
}

impl Default for ModelCheck {
    fn default() -> Self {
        Self {
            cfg: ModelConfig::tiny(),
            size: 32,
            batch: 2,
            per_param: 3,
            seed: 7,
        }
    }
}

fn input(store: &mut ParamStore<f64>, name: &str, shape: &[usize], rng: &mut ChaCha8Rng) -> Result<ParamId> {
    Ok(store.add_param(format!("input.{name}"), uniform(shape.to_vec(), 1.0, rng))?)
}

fn weighted_sum(g: &mut Graph<'_, f64>, y: Var, r: &Tensor<f64>) -> Result<Var> {
    let r = g.constant(r.clone());
    let p = g.mul(y, r)?;
    Ok(g.sum(p))
}

fn text<'a>(g: &mut Graph<'a, f64>, words: ParamId, global: ParamId, lengths: &[usize]) -> TextEmbedding {
    let words = g.param(words);
    let max_len = g.shape(words)[1];
    TextEmbedding {
        words,
        global: g.param(global),
        lengths: lengths.to_vec(),
        max_len,
    }
}

/// The 7×7 spatial gate on a `1×4×3×3` input.
pub fn check_spatial_gate() -> Result<CheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut store = ParamStore::new();
    let cfg = ModelConfig { d_m: 4, ..ModelConfig::tiny() };
    let tfam = Tfam::new(&mut store, &cfg, 0, &mut rng)?;
    let x = input(&mut store, "x", &[1, 4, 3, 3], &mut rng)?;
    let r = uniform(vec![1, 4, 3, 3], 1.0, &mut rng);
    check_params("spatial gate", &mut store, None, |g| {
        let x = g.param(x);
        let (y, _) = tfam.gate.forward(g, x).map_err(to_tensor_err)?;
        weighted_sum(g, y, &r).map_err(to_tensor_err)
    })
    .map_err(Into::into)
}

/// One text fusion block with padded prompts.
pub fn check_tfam() -> Result<CheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut store = ParamStore::new();
    let cfg = ModelConfig::tiny();
    let tfam = Tfam::new(&mut store, &cfg, 0, &mut rng)?;
    let f = input(&mut store, "f", &[2, 2 * cfg.d_a, 3, 3], &mut rng)?;
    let words = input(&mut store, "words", &[2, 3, cfg.d_t], &mut rng)?;
    let global = input(&mut store, "global", &[2, cfg.d_t], &mut rng)?;
    let r = uniform(vec![2, cfg.d_m, 3, 3], 1.0, &mut rng);
    let lengths = [3, 1];
    let run = |g: &mut Graph<'_, f64>| -> Result<Var> {
        let t = text(g, words, global, &lengths);
        let mask = t.mask::<f64>(0);
        let f = g.param(f);
        let out = tfam.forward(g, f, t.words, mask.as_ref())?;
        weighted_sum(g, out.fused, &r)
    };
    check_params("tfam", &mut store, None, |g| run(g).map_err(to_tensor_err)).map_err(Into::into)
}

/// One decoder block: positions, joint self-attention, word cross-attention.
pub fn check_decoder() -> Result<CheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut store = ParamStore::new();
    let cfg = ModelConfig::tiny();
    let block = ScaleDecoderBlock::new(&mut store, &cfg, 0, &mut rng)?;
    let f = input(&mut store, "f", &[2, cfg.d_m, 2, 3], &mut rng)?;
    let words = input(&mut store, "words", &[2, 3, cfg.d_t], &mut rng)?;
    let global = input(&mut store, "global", &[2, cfg.d_t], &mut rng)?;
    let r = uniform(vec![2, 6, cfg.d_m], 1.0, &mut rng);
    let lengths = [2, 3];
    let run = |g: &mut Graph<'_, f64>| -> Result<Var> {
        let t = text(g, words, global, &lengths);
        let f = g.param(f);
        let tokens = tokenize_scale(g, f)?;
        let y = block.decode_scale(g, tokens, &t)?;
        weighted_sum(g, y, &r)
    };
    check_params("decoder block", &mut store, None, |g| run(g).map_err(to_tensor_err)).map_err(Into::into)
}

/// The FPN over four scales of an 32×32 input.
pub fn check_fpn() -> Result<CheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let mut store = ParamStore::new();
    let cfg = ModelConfig { d_m: 4, ..ModelConfig::tiny() };
    let fpn = FpnIntegrator::new(&mut store, &cfg, &mut rng)?;
    let grids: Vec<ParamId> = (0..LEVELS)
        .map(|i| {
            let s = 8 >> i;
            input(&mut store, &format!("grid{i}"), &[1, cfg.d_m, s, s], &mut rng)
        })
        .collect::<Result<_>>()?;
    let r = uniform(vec![1, cfg.d_m, 8, 8], 1.0, &mut rng);
    let run = |g: &mut Graph<'_, f64>| -> Result<Var> {
        let vars: Vec<Var> = grids.iter().map(|&id| g.param(id)).collect();
        let y = fpn.integrate(g, &vars)?;
        weighted_sum(g, y, &r)
    };
    check_params("fpn", &mut store, None, |g| run(g).map_err(to_tensor_err)).map_err(Into::into)
}

/// The language path producing `f_L`.
pub fn check_language_path() -> Result<CheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let mut store = ParamStore::new();
    let cfg = ModelConfig::tiny();
    let path = LanguagePath::new(&mut store, &cfg, &mut rng)?;
    let global = input(&mut store, "global", &[2, cfg.d_t], &mut rng)?;
    let visual = input(&mut store, "visual", &[2, 5, cfg.d_m], &mut rng)?;
    let r = uniform(vec![2, cfg.d_m], 1.0, &mut rng);
    let run = |g: &mut Graph<'_, f64>| -> Result<Var> {
        let (fg, fv) = (g.param(global), g.param(visual));
        let y = path.forward(g, fg, fv)?;
        weighted_sum(g, y, &r)
    };
    check_params("language path", &mut store, None, |g| run(g).map_err(to_tensor_err)).map_err(Into::into)
}

/// Full training loss of the whole network with respect to every trainable
/// parameter.
pub fn check_model(opts: &ModelCheck) -> Result<CheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut store = ParamStore::new();
    let vocab_size = 5;
    let model = ChangeDetector::new(&opts.cfg, vocab_size, &mut store, &mut rng)?;
    let (b, s) = (opts.batch, opts.size);
    let img_a = uniform(vec![b, 3, s, s], 1.0, &mut rng);
    let img_b = uniform(vec![b, 3, s, s], 1.0, &mut rng);
    let target = Tensor::new(
        vec![b, 1, s, s],
        (0..b * s * s).map(|_| f64::from(u8::from(rng.gen_bool(0.3)))).collect(),
    )?;
    let prompts: Vec<Vec<usize>> = (0..b)
        .map(|i| if i % 2 == 0 { vec![1] } else { vec![2, 4] })
        .collect();
    let loss_cfg = LossConfig::default();
    let run = |g: &mut Graph<'_, f64>| -> Result<Var> {
        let a = g.constant(img_a.clone());
        let bb = g.constant(img_b.clone());
        let pred = model.forward(g, a, bb, &prompts)?;
        Ok(total_loss(g, &pred.maps, &target, &loss_cfg)?.total)
    };
    check_params("full model", &mut store, Some(opts.per_param), |g| {
        run(g).map_err(to_tensor_err)
    })
    .map_err(Into::into)
}

/// Every primitive, every composite module, then the full model; each report
/// paired with the tolerance it must meet.
pub fn full_suite(opts: &ModelCheck) -> Result<Vec<(CheckReport, f64)>> {
    let mut out: Vec<(CheckReport, f64)> = primitive_suite()?
        .into_iter()
        .map(|r| (r, PRIMITIVE_TOL))
        .collect();
    for r in [
        check_spatial_gate()?,
        check_tfam()?,
        check_decoder()?,
        check_fpn()?,
        check_language_path()?,
    ] {
        out.push((r, PRIMITIVE_TOL));
    }
    out.push((check_model(opts)?, MODEL_TOL));
    Ok(out)
}

/// `check_params` closures must return the tensor crate's error type.
fn to_tensor_err(e: crate::Error) -> TensorError {
    match e {
        crate::Error::Tensor(t) => t,
        other => TensorError::Usage(other.to_string()),
    }
}
