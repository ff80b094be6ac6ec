//! Batching, the Adam training loop, inference and evaluation.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::time::Instant;

use lgcd_tensor::optim::Adam;
use lgcd_tensor::{Graph, Mode, ParamStore, Real, Tensor};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{LossConfig, LEVELS};
use crate::data::{augment, AugmentConfig, BiTemporalPair};
use crate::error::{Error, Result};
use crate::loss::total_loss;
use crate::metrics::{confusion, ConfusionCounts};
use crate::model::ChangeDetector;
use crate::tfam::attention_heatmap;
use crate::vocab::Vocabulary;
use crate::vsfd::threshold;

/// Stacked model inputs for a group of pairs.
#[derive(Clone, Debug)]
pub struct Batch<T: Real> {
    pub img_a: Tensor<T>,
    pub img_b: Tensor<T>,
    pub mask: Tensor<T>,
    pub prompts: Vec<Vec<usize>>,
}

fn stack<T: Real>(items: &[&Tensor<f32>]) -> Result<Tensor<T>> {
    let first = items.first().ok_or_else(|| Error::Usage("empty batch".into()))?;
    let mut shape = vec![items.len()];
    shape.extend_from_slice(first.shape());
    let mut data = Vec::with_capacity(items.len() * first.numel());
    for t in items {
        if t.shape() != first.shape() {
            return Err(Error::Usage(format!(
                "cannot batch {:?} with {:?}",
                t.shape(),
                first.shape()
            )));
        }
        data.extend(t.data().iter().map(|&v| T::lit(f64::from(v))));
    }
    Ok(Tensor::new(shape, data)?)
}

pub fn make_batch<T: Real>(pairs: &[&BiTemporalPair], vocab: &Vocabulary, max_len: usize) -> Result<Batch<T>> {
    let a: Vec<_> = pairs.iter().map(|p| &p.img_a).collect();
    let b: Vec<_> = pairs.iter().map(|p| &p.img_b).collect();
    let m: Vec<_> = pairs.iter().map(|p| &p.mask).collect();
    Ok(Batch {
        img_a: stack(&a)?,
        img_b: stack(&b)?,
        mask: stack(&m)?,
        prompts: pairs
            .iter()
            .map(|p| vocab.encode(&p.prompt, max_len))
            .collect::<Result<_>>()?,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub steps: usize,
    pub seed: u64,
    pub freeze_encoder: bool,
    pub loss: LossConfig,
    pub augment: AugmentConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            batch_size: 4,
            steps: 1000,
            seed: 0,
            freeze_encoder: false,
            loss: LossConfig::default(),
            augment: AugmentConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr must be positive (got {})", self.lr)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        for (name, p) in [("hflip", self.augment.hflip), ("vflip", self.augment.vflip)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("{name} probability {p} is outside [0, 1]")));
            }
        }
        self.loss.validate()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub total: f64,
    pub ce: f64,
    pub iou: f64,
    pub dice: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub records: Vec<StepRecord>,
    pub seconds: f64,
}

impl TrainLog {
    pub const CSV_HEADER: &'static str = "step,total,ce,iou,dice";

    /// Per-step losses; the wall-clock time is not included so that the
    /// file depends only on the configuration.
    pub fn to_csv(&self) -> String {
        let mut s = String::from(Self::CSV_HEADER);
        s.push('\n');
        for r in &self.records {
            writeln!(s, "{},{},{},{},{}", r.step, r.total, r.ce, r.iou, r.dice).expect("string write");
        }
        s
    }
}

/// Owns the optimiser state and the sample order for one training run.
pub struct Trainer<'m, T: Real> {
    pub model: &'m ChangeDetector,
    pub store: ParamStore<T>,
    pub cfg: TrainConfig,
    vocab: Vocabulary,
    opt: Adam<T>,
    rng: ChaCha8Rng,
    order: Vec<usize>,
    cursor: usize,
    steps: usize,
}

impl<'m, T: Real> Trainer<'m, T> {
    pub fn new(model: &'m ChangeDetector, mut store: ParamStore<T>, vocab: Vocabulary, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        model.set_encoder_frozen(&mut store, cfg.freeze_encoder);
        Ok(Self {
            model,
            store,
            opt: Adam::new(cfg.lr),
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            vocab,
            cfg,
            order: Vec::new(),
            cursor: 0,
            steps: 0,
        })
    }

    fn next_indices(&mut self, n: usize) -> Vec<usize> {
        (0..self.cfg.batch_size)
            .map(|_| {
                if self.cursor == self.order.len() {
                    self.order = (0..n).collect();
                    self.order.shuffle(&mut self.rng);
                    self.cursor = 0;
                }
                self.cursor += 1;
                self.order[self.cursor - 1]
            })
            .collect()
    }

    /// One optimisation step on a batch drawn from `pairs`.
    pub fn step(&mut self, pairs: &[BiTemporalPair]) -> Result<StepRecord> {
        if pairs.is_empty() {
            return Err(Error::Usage("no training samples".into()));
        }
        let idx = self.next_indices(pairs.len());
        let samples = idx
            .iter()
            .map(|&i| augment(&pairs[i], &self.cfg.augment, &mut self.rng))
            .collect::<Result<Vec<_>>>()?;
        let refs: Vec<&BiTemporalPair> = samples.iter().collect();
        let batch = make_batch::<T>(&refs, &self.vocab, self.model.cfg.max_prompt_len)?;

        let mut g = Graph::with_params(&self.store, Mode::Train);
        let a = g.constant(batch.img_a);
        let b = g.constant(batch.img_b);
        let pred = self.model.forward(&mut g, a, b, &batch.prompts)?;
        let loss = total_loss(&mut g, &pred.maps, &batch.mask, &self.cfg.loss)?;
        let total = g.value(loss.total).item().to_f64().unwrap_or(f64::NAN);
        let grads = g.backward(loss.total)?;
        self.store.zero_grad();
        grads.apply(&mut self.store);
        self.opt.step(&mut self.store);
        self.steps += 1;
        Ok(StepRecord {
            step: self.steps,
            total,
            ce: loss.ce,
            iou: loss.iou,
            dice: loss.dice,
        })
    }

    /// Runs `cfg.steps` steps, or stops early when `on_step` returns false.
    pub fn run(&mut self, pairs: &[BiTemporalPair], mut on_step: impl FnMut(&Self, &StepRecord) -> bool) -> Result<TrainLog> {
        let start = Instant::now();
        let mut log = TrainLog::default();
        for _ in 0..self.cfg.steps {
            let r = self.step(pairs)?;
            log.records.push(r);
            if !on_step(self, &r) {
                break;
            }
        }
        log.seconds = start.elapsed().as_secs_f64();
        Ok(log)
    }
}

/// Eval-mode outputs for a batch, in 32-bit.
#[derive(Clone, Debug)]
pub struct Inference {
    /// Final probability map `[B, 1, H, W]`.
    pub prob: Tensor<f32>,
    /// All six maps, final last.
    pub maps: Vec<Tensor<f32>>,
    /// Per scale: `(h, w, per-sample normalised attention map)`.
    pub attention: Vec<(usize, usize, Vec<Vec<f64>>)>,
    /// Per scale: `(h, w, per-sample gate map)`.
    pub gates: Vec<(usize, usize, Vec<Vec<f64>>)>,
}

impl Inference {
    /// Binary mask of sample `i`.
    pub fn mask(&self, i: usize) -> Vec<u8> {
        let n = self.prob.numel() / self.prob.shape()[0];
        threshold(&self.prob.data()[i * n..(i + 1) * n])
    }
}

pub fn predict<T: Real>(
    model: &ChangeDetector,
    store: &ParamStore<T>,
    img_a: &Tensor<T>,
    img_b: &Tensor<T>,
    prompts: &[Vec<usize>],
) -> Result<Inference> {
    let mut g = Graph::with_params(store, Mode::Eval);
    let a = g.constant(img_a.clone());
    let b = g.constant(img_b.clone());
    let pred = model.forward(&mut g, a, b, prompts)?;
    let maps: Vec<Tensor<f32>> = pred.maps.iter().map(|&m| g.value(m).cast()).collect();
    let mut attention = Vec::with_capacity(LEVELS);
    let mut gates = Vec::with_capacity(LEVELS);
    for out in &pred.tfam {
        let s = g.shape(out.gate).to_vec();
        let (h, w) = (s[2], s[3]);
        attention.push((h, w, attention_heatmap(g.value(out.trace.scores), &pred.text.lengths, h, w)));
        let gv = g.value(out.gate).to_f64_vec();
        gates.push((h, w, gv.chunks(h * w).map(<[f64]>::to_vec).collect()));
    }
    Ok(Inference {
        prob: maps[maps.len() - 1].clone(),
        maps,
        attention,
        gates,
    })
}

/// Predicts one `[3, H, W]` pair larger than the training tiles by running
/// `window`-sized tiles at half-window stride and keeping, for every pixel,
/// the tile whose centre is nearest. Returns the `[1, H, W]` probabilities.
pub fn predict_sliding<T: Real>(
    model: &ChangeDetector,
    store: &ParamStore<T>,
    img_a: &Tensor<f32>,
    img_b: &Tensor<f32>,
    prompt: &[usize],
    window: usize,
) -> Result<Tensor<f32>> {
    let (h, w) = (img_a.shape()[1], img_a.shape()[2]);
    if img_b.shape() != img_a.shape() {
        return Err(Error::TemporalPair {
            level: 0,
            a: img_a.shape().to_vec(),
            b: img_b.shape().to_vec(),
        });
    }
    if h < window || w < window {
        return Err(Error::Config(format!("image {h}x{w} is smaller than the {window} window")));
    }
    model.cfg.check_input(window, window)?;
    let origins = crate::data::sliding_windows(h, w, window, window / 2);
    let nearest = |pos: usize, starts: &[usize]| -> usize {
        let c = pos as f64 + 0.5;
        *starts
            .iter()
            .min_by(|&&s, &&t| {
                let ds = (c - (s as f64 + window as f64 / 2.0)).abs();
                let dt = (c - (t as f64 + window as f64 / 2.0)).abs();
                ds.partial_cmp(&dt).expect("finite")
            })
            .expect("at least one window")
    };
    let mut ys: Vec<usize> = origins.iter().map(|o| o.0).collect();
    ys.dedup();
    let mut xs: Vec<usize> = origins.iter().map(|o| o.1).collect();
    xs.sort_unstable();
    xs.dedup();
    let row_owner: Vec<usize> = (0..h).map(|y| nearest(y, &ys)).collect();
    let col_owner: Vec<usize> = (0..w).map(|x| nearest(x, &xs)).collect();

    let cut = |img: &Tensor<f32>, top: usize, left: usize| -> Result<Tensor<T>> {
        let d = img.data();
        let mut out = Vec::with_capacity(3 * window * window);
        for c in 0..3 {
            for y in 0..window {
                let row = (c * h + top + y) * w + left;
                out.extend(d[row..row + window].iter().map(|&v| T::lit(f64::from(v))));
            }
        }
        Ok(Tensor::new([1, 3, window, window], out)?)
    };
    let mut prob = vec![0f32; h * w];
    for &(top, left) in &origins {
        let inf = predict(model, store, &cut(img_a, top, left)?, &cut(img_b, top, left)?, &[prompt.to_vec()])?;
        let p = inf.prob.data();
        for y in top..top + window {
            if row_owner[y] != top {
                continue;
            }
            for x in left..left + window {
                if col_owner[x] == left {
                    prob[y * w + x] = p[(y - top) * window + (x - left)];
                }
            }
        }
    }
    Ok(Tensor::new([1, h, w], prob)?)
}

/// Confusion counts per prompt and over the whole set.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EvalReport {
    pub per_prompt: BTreeMap<String, ConfusionCounts>,
    pub overall: ConfusionCounts,
}

/// Scores every pair's final mask against its label. Batches are evaluated
/// independently and reduced in input order.
pub fn evaluate<T: Real>(
    model: &ChangeDetector,
    store: &ParamStore<T>,
    vocab: &Vocabulary,
    pairs: &[BiTemporalPair],
    batch_size: usize,
) -> Result<EvalReport> {
    let chunks: Vec<&[BiTemporalPair]> = pairs.chunks(batch_size.max(1)).collect();
    let run = |chunk: &&[BiTemporalPair]| -> Result<Vec<(String, ConfusionCounts)>> {
        let refs: Vec<&BiTemporalPair> = chunk.iter().collect();
        let batch = make_batch::<T>(&refs, vocab, model.cfg.max_prompt_len)?;
        let inf = predict(model, store, &batch.img_a, &batch.img_b, &batch.prompts)?;
        chunk
            .iter()
            .enumerate()
            .map(|(i, p)| Ok((p.prompt.clone(), confusion(&inf.mask(i), &p.mask_u8())?)))
            .collect()
    };
    #[cfg(feature = "parallel")]
    let results: Vec<_> = {
        use rayon::prelude::*;
        chunks.par_iter().map(run).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let results: Vec<_> = chunks.iter().map(run).collect();

    let mut report = EvalReport::default();
    for r in results {
        for (prompt, c) in r? {
            *report.per_prompt.entry(prompt).or_default() += c;
            report.overall += c;
        }
    }
    Ok(report)
}
