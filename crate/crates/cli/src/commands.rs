use std::path::{Path, PathBuf};

use lgcd_core::checkpoint::{self, Checkpoint};
use lgcd_core::data::{generate_scenes, read_dataset, read_rgb, write_dataset, write_gray, BiTemporalPair, SamplerConfig};
use lgcd_core::gradcheck::{full_suite, ModelCheck};
use lgcd_core::metrics::{csv_row, Metrics, CSV_HEADER};
use lgcd_core::train::{evaluate, predict, predict_sliding, Trainer};
use lgcd_core::vsfd::threshold;
use lgcd_core::{ChangeDetector, ModelConfig, Vocabulary};
use lgcd_tensor::ParamStore;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::RunConfig;
use crate::error::{CliError, EXIT_FAILURE, EXIT_MISSING_DATA};
use crate::{write_file, Common, EvalArgs, GenDataArgs, GradcheckArgs, InferArgs, TrainArgs};

fn resolve(common: &Common) -> Result<RunConfig, CliError> {
    let mut cfg = RunConfig::load(common.config.as_deref())?;
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(o) = &common.out {
        cfg.output = o.clone();
    }
    if let Some(c) = &common.checkpoint {
        cfg.checkpoint = Some(c.clone());
    }
    Ok(cfg)
}

fn checkpoint_path(cfg: &RunConfig) -> PathBuf {
    cfg.checkpoint.clone().unwrap_or_else(|| cfg.output.join("model.ckpt"))
}

fn load_dataset(cfg: &RunConfig) -> Result<(PathBuf, Vec<BiTemporalPair>), CliError> {
    let dir = cfg
        .dataset
        .clone()
        .ok_or_else(|| CliError::new(EXIT_MISSING_DATA, "no dataset given (--dataset or \"dataset\")"))?;
    let pairs = read_dataset(&dir).map_err(CliError::input)?;
    if pairs.is_empty() {
        return Err(CliError::new(EXIT_MISSING_DATA, format!("{}: dataset is empty", dir.display())));
    }
    let shape = pairs[0].img_a.shape().to_vec();
    if let Some(p) = pairs.iter().find(|p| p.img_a.shape() != shape) {
        return Err(CliError::new(
            EXIT_MISSING_DATA,
            format!("{}: sample {} is {:?}, expected {shape:?}", dir.display(), p.id, p.img_a.shape()),
        ));
    }
    Ok((dir, pairs))
}

fn check_prompts(pairs: &[BiTemporalPair], vocab: &Vocabulary, max_len: usize) -> Result<(), CliError> {
    for p in pairs {
        vocab.encode(&p.prompt, max_len)?;
    }
    Ok(())
}

fn load_checkpoint(cfg: &RunConfig) -> Result<(Checkpoint, ChangeDetector, ParamStore<f32>), CliError> {
    let ck = checkpoint::load(&checkpoint_path(cfg)).map_err(CliError::input)?;
    let (model, store) = ck.restore::<f32>().map_err(CliError::input)?;
    Ok((ck, model, store))
}

#[derive(Serialize)]
struct TrainSummary {
    steps: usize,
    seconds: f64,
    final_loss: f64,
    train_precision: f64,
    train_recall: f64,
    train_f1: f64,
    train_iou: f64,
    train_oa: f64,
}

pub fn train(a: &TrainArgs) -> Result<(), CliError> {
    let mut cfg = resolve(&a.common)?;
    if let Some(d) = &a.dataset {
        cfg.dataset = Some(d.clone());
    }
    cfg.freeze_encoder |= a.freeze_encoder;
    if let Some(s) = a.steps {
        cfg.steps = s;
    }
    if let Some(lr) = a.lr {
        cfg.lr = lr;
    }
    if let Some(b) = a.batch_size {
        cfg.batch_size = b;
    }
    cfg.validate()?;
    let (_, pairs) = load_dataset(&cfg)?;
    let (h, w) = (pairs[0].height(), pairs[0].width());
    if h < cfg.image_size || w < cfg.image_size {
        return Err(CliError::config(format!(
            "dataset images are {h}x{w}, smaller than image_size {}",
            cfg.image_size
        )));
    }
    let model_cfg = cfg.model();
    let vocab = cfg.vocab()?;
    check_prompts(&pairs, &vocab, model_cfg.max_prompt_len)?;
    cfg.echo(&cfg.output)?;

    let mut store = ParamStore::<f32>::new();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let model = ChangeDetector::new(&model_cfg, vocab.len(), &mut store, &mut rng)?;
    let mut trainer = Trainer::new(&model, store, vocab.clone(), cfg.train(h, w))?;
    let every = cfg.log_every;
    let log = trainer.run(&pairs, |_, r| {
        if every > 0 && r.step % every == 0 {
            eprintln!("step {:>6}  loss {:.5}  ce {:.5}  iou {:.5}  dice {:.5}", r.step, r.total, r.ce, r.iou, r.dice);
        }
        true
    })?;
    write_file(&cfg.output.join("loss.csv"), log.to_csv().as_bytes())?;
    checkpoint::save(&checkpoint_path(&cfg), &model_cfg, &vocab, &trainer.store)?;

    let report = evaluate(&model, &trainer.store, &vocab, &pairs, cfg.batch_size)?;
    let m = report.overall.metrics();
    let summary = TrainSummary {
        steps: log.records.len(),
        seconds: log.seconds,
        final_loss: log.records.last().map_or(f64::NAN, |r| r.total),
        train_precision: m.precision,
        train_recall: m.recall,
        train_f1: m.f1,
        train_iou: m.iou,
        train_oa: m.oa,
    };
    let json = serde_json::to_string_pretty(&summary).expect("summary serialises");
    write_file(&cfg.output.join("summary.json"), (json + "\n").as_bytes())?;
    eprintln!(
        "trained {} steps in {:.1}s; train F1 {:.2}%, IoU {:.2}%",
        summary.steps,
        summary.seconds,
        100.0 * m.f1,
        100.0 * m.iou
    );
    Ok(())
}

pub fn eval(a: &EvalArgs) -> Result<(), CliError> {
    let mut cfg = resolve(&a.common)?;
    if let Some(d) = &a.dataset {
        cfg.dataset = Some(d.clone());
    }
    cfg.validate()?;
    let (ck, model, store) = load_checkpoint(&cfg)?;
    let (dir, mut pairs) = load_dataset(&cfg)?;
    if let Some(p) = &a.prompt {
        for pair in &mut pairs {
            pair.prompt = p.clone();
        }
    }
    check_prompts(&pairs, &ck.vocabulary, ck.model.max_prompt_len)?;
    model.cfg.check_input(pairs[0].height(), pairs[0].width())?;
    cfg.echo(&cfg.output)?;

    let report = evaluate(&model, &store, &ck.vocabulary, &pairs, cfg.batch_size)?;
    let name = dir.file_name().map_or_else(|| "dataset".into(), |n| n.to_string_lossy().into_owned());
    let mut csv = format!("{CSV_HEADER}\n");
    let mut row = |prompt: &str, m: &Metrics| {
        csv.push_str(&csv_row(&name, prompt, m));
        csv.push('\n');
    };
    for (prompt, c) in &report.per_prompt {
        row(prompt, &c.metrics());
    }
    row("all", &report.overall.metrics());
    print!("{csv}");
    write_file(&cfg.output.join("metrics.csv"), csv.as_bytes())
}

fn to_bytes(p: &[f32], scale: f32) -> Vec<u8> {
    p.iter().map(|&v| (v.clamp(0.0, 1.0) * scale).round() as u8).collect()
}

fn write_map(path: &Path, values: &[f64], h: usize, w: usize) -> Result<(), CliError> {
    let bytes: Vec<u8> = values.iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
    Ok(write_gray(path, &bytes, h, w)?)
}

pub fn infer(a: &InferArgs) -> Result<(), CliError> {
    let mut cfg = resolve(&a.common)?;
    if let Some(w) = a.window {
        cfg.window = w;
    }
    cfg.validate()?;
    let (ck, model, store) = load_checkpoint(&cfg)?;
    let prompt = ck.vocabulary.encode(&a.prompt, ck.model.max_prompt_len)?;
    let img_a = read_rgb(&a.image_a).map_err(CliError::input)?;
    let img_b = read_rgb(&a.image_b).map_err(CliError::input)?;
    if img_a.shape() != img_b.shape() {
        return Err(CliError::new(
            EXIT_FAILURE,
            format!("image sizes differ: {:?} vs {:?}", img_a.shape(), img_b.shape()),
        ));
    }
    let (h, w) = (img_a.shape()[1], img_a.shape()[2]);
    let whole = a.window.is_none() && model.cfg.check_input(h, w).is_ok();
    if a.heatmaps && !whole {
        return Err(CliError::config(
            "--heatmaps needs whole-image inference: sides must be multiples of 32 and --window unset",
        ));
    }
    cfg.echo(&cfg.output)?;

    let prob = if whole {
        let a4 = img_a.reshape([1, 3, h, w])?;
        let b4 = img_b.reshape([1, 3, h, w])?;
        let inf = predict(&model, &store, &a4, &b4, &[prompt])?;
        if a.heatmaps {
            for (i, ((ah, aw, att), (gh, gw, gate))) in inf.attention.iter().zip(&inf.gates).enumerate() {
                write_map(&cfg.output.join(format!("attention_scale{i}.png")), &att[0], *ah, *aw)?;
                write_map(&cfg.output.join(format!("gate_scale{i}.png")), &gate[0], *gh, *gw)?;
            }
        }
        inf.prob.reshape([1, h, w])?
    } else {
        predict_sliding(&model, &store, &img_a, &img_b, &prompt, cfg.window)?
    };
    let mask: Vec<u8> = threshold(prob.data()).into_iter().map(|v| v * 255).collect();
    write_gray(&cfg.output.join("mask.png"), &mask, h, w)?;
    write_gray(&cfg.output.join("prob.png"), &to_bytes(prob.data(), 255.0), h, w)?;
    Ok(())
}

pub fn gen_data(a: &GenDataArgs) -> Result<(), CliError> {
    let mut sampler = match &a.sampler {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| CliError::config(format!("cannot read {}: {e}", p.display())))?;
            serde_json::from_str(&text).map_err(|e| CliError::config(format!("{}: {e}", p.display())))?
        }
        None => SamplerConfig::default(),
    };
    sampler.size = a.size;
    if sampler.size == 0 || sampler.size % 32 != 0 {
        return Err(CliError::config(format!("size {} is not a positive multiple of 32", sampler.size)));
    }
    let pairs = generate_scenes(a.count, &sampler, a.seed)?;
    write_dataset(&pairs, &a.out)?;
    let json = serde_json::to_string_pretty(&sampler).expect("sampler serialises");
    write_file(&a.out.join("sampler.json"), (json + "\n").as_bytes())?;
    eprintln!("wrote {} pairs from {} scenes to {}", pairs.len(), a.count, a.out.display());
    Ok(())
}

pub fn gradcheck(a: &GradcheckArgs) -> Result<(), CliError> {
    let opts = ModelCheck {
        cfg: ModelConfig::tiny(),
        size: a.size,
        per_param: a.per_param,
        seed: a.seed,
        ..ModelCheck::default()
    };
    let reports = full_suite(&opts)?;
    let mut failed = 0;
    for (r, tol) in &reports {
        let ok = r.passes(*tol);
        failed += usize::from(!ok);
        println!(
            "{} {:<24} checked {:>6} skipped {:>4} max rel err {:.3e} (tol {:.0e})",
            if ok { "PASS" } else { "FAIL" },
            r.name,
            r.checked,
            r.skipped,
            r.max_rel_err,
            tol
        );
    }
    if failed > 0 {
        return Err(CliError::new(EXIT_FAILURE, format!("{failed} of {} checks failed", reports.len())));
    }
    Ok(())
}

