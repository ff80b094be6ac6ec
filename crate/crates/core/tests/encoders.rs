mod common;

use common::{image, model, two_class_scene};
use lgcd_core::checkpoint;
use lgcd_core::encoders::ENCODER_PREFIX;
use lgcd_core::train::{make_batch, TrainConfig, Trainer};
use lgcd_core::{Error, ModelConfig, Vocabulary};
use lgcd_tensor::{Graph, Mode};
use proptest::prelude::*;

fn pyramid_shapes(cfg: &ModelConfig, h: usize, w: usize) -> Vec<Vec<usize>> {
    let (m, store) = model::<f32>(cfg, 1);
    let mut g = Graph::with_params(&store, Mode::Eval);
    let x = g.constant(image(&[1, 3, h, w], 2));
    let p = m.image_encoder.forward(&mut g, x, false).unwrap();
    p.levels.iter().map(|&v| g.shape(v).to_vec()).collect()
}

#[test]
fn pyramid_at_64_with_base_16() {
    let shapes = pyramid_shapes(&ModelConfig::default(), 64, 64);
    assert_eq!(
        shapes,
        vec![vec![1, 16, 16, 16], vec![1, 32, 8, 8], vec![1, 64, 4, 4], vec![1, 128, 2, 2]]
    );
}

#[test]
fn pyramid_at_96() {
    let spatial: Vec<_> = pyramid_shapes(&ModelConfig::default(), 96, 96)
        .iter()
        .map(|s| (s[2], s[3]))
        .collect();
    assert_eq!(spatial, vec![(24, 24), (12, 12), (6, 6), (3, 3)]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]
    #[test]
    fn pyramid_schedule_for_multiples_of_32(kh in 1usize..=4, kw in 1usize..=4) {
        let cfg = ModelConfig::tiny();
        let (h, w) = (32 * kh, 32 * kw);
        for (i, s) in pyramid_shapes(&cfg, h, w).iter().enumerate() {
            prop_assert_eq!(s, &vec![1, cfg.base << i, h >> (i + 2), w >> (i + 2)]);
        }
    }
}

#[test]
fn identical_images_give_identical_pyramids() {
    let (m, store) = model::<f32>(&ModelConfig::tiny(), 3);
    let img = image::<f32>(&[1, 3, 64, 64], 4);
    let mut g = Graph::with_params(&store, Mode::Eval);
    let a = g.constant(img.clone());
    let b = g.constant(img);
    let pa = m.image_encoder.forward(&mut g, a, false).unwrap();
    let pb = m.image_encoder.forward(&mut g, b, false).unwrap();
    for i in 0..4 {
        assert_eq!(g.value(pa.levels[i]).data(), g.value(pb.levels[i]).data());
    }
}

#[test]
fn indivisible_image_is_a_config_error() {
    let (m, store) = model::<f32>(&ModelConfig::tiny(), 3);
    let mut g = Graph::with_params(&store, Mode::Eval);
    let x = g.constant(image(&[1, 3, 48, 64], 4));
    assert!(matches!(m.image_encoder.forward(&mut g, x, false), Err(Error::Config(_))));
}

fn encode(prompt: &str) -> (Vec<f64>, Vec<f64>, Vec<usize>, Vec<usize>) {
    let vocab = Vocabulary::default();
    let (m, store) = model::<f64>(&ModelConfig::default(), 5);
    let ids = vocab.encode(prompt, 8).unwrap();
    let mut g = Graph::with_params(&store, Mode::Eval);
    let t = m.text_encoder.forward(&mut g, &[ids]).unwrap();
    (
        g.value(t.words).to_f64_vec(),
        g.value(t.global).to_f64_vec(),
        g.shape(t.words).to_vec(),
        g.shape(t.global).to_vec(),
    )
}

#[test]
fn single_word_shapes() {
    let (_, _, ws, gs) = encode("building");
    assert_eq!(ws, vec![1, 1, 64]);
    assert_eq!(gs, vec![1, 64]);
}

#[test]
fn word_order_changes_the_encoding() {
    let (a, ..) = encode("building change");
    let (b, ..) = encode("change building");
    assert_ne!(a, b);
}

#[test]
fn text_encoding_is_deterministic() {
    assert_eq!(encode("road tank"), encode("road tank"));
}

#[test]
fn text_rows_are_layer_normalised() {
    let (words, global, ..) = encode("building road tank change");
    for row in words.chunks(64).chain(global.chunks(64)) {
        assert!(row.iter().all(|v| v.is_finite()));
        let mean = row.iter().sum::<f64>() / 64.0;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 64.0;
        assert!(mean.abs() < 1e-9);
        assert!((var - 1.0).abs() < 1e-3, "variance {var}");
    }
}

#[test]
fn global_embedding_is_not_the_word_average() {
    let (words, global, ..) = encode("building road");
    let avg: Vec<f64> = (0..64).map(|k| (words[k] + words[64 + k]) / 2.0).collect();
    assert!(common::max_abs_diff(&avg, &global) > 1e-3);
}

#[test]
fn unknown_token_names_the_token() {
    let err = Vocabulary::default().encode("building bridge", 8).unwrap_err();
    assert!(matches!(&err, Error::UnknownToken { token, .. } if token == "bridge"));
    assert!(err.to_string().contains("bridge"));
}

fn tiny_trainer_cfg(freeze: bool) -> TrainConfig {
    TrainConfig {
        batch_size: 2,
        freeze_encoder: freeze,
        lr: 1e-3,
        ..TrainConfig::default()
    }
}

fn encoder_bytes(cfg: &ModelConfig, store: &lgcd_tensor::ParamStore<f32>) -> Vec<u8> {
    let bytes = checkpoint::encode(cfg, &Vocabulary::default(), store);
    checkpoint::decode(&bytes).unwrap().entry_bytes(ENCODER_PREFIX)
}

#[test]
fn frozen_encoder_is_bit_stable_under_training() {
    let cfg = ModelConfig::tiny();
    let (m, store) = model::<f32>(&cfg, 6);
    let before = encoder_bytes(&cfg, &store);
    assert!(!before.is_empty());
    let mut tr = Trainer::new(&m, store, Vocabulary::default(), tiny_trainer_cfg(true)).unwrap();
    let pairs = two_class_scene(1);
    let first = encoder_bytes(&cfg, &tr.store);
    for _ in 0..10 {
        tr.step(&pairs).unwrap();
    }
    assert_eq!(first, before);
    assert_eq!(encoder_bytes(&cfg, &tr.store), before);
    // the rest of the model did train
    let all_before = checkpoint::encode(&cfg, &Vocabulary::default(), &model::<f32>(&cfg, 6).1);
    assert_ne!(checkpoint::encode(&cfg, &Vocabulary::default(), &tr.store), all_before);
}

#[test]
fn unfrozen_encoder_moves_after_one_step() {
    let cfg = ModelConfig::tiny();
    let (m, store) = model::<f32>(&cfg, 6);
    let before = encoder_bytes(&cfg, &store);
    let mut tr = Trainer::new(&m, store, Vocabulary::default(), tiny_trainer_cfg(false)).unwrap();
    tr.step(&two_class_scene(1)).unwrap();
    assert_ne!(encoder_bytes(&cfg, &tr.store), before);
}

#[test]
fn frozen_encoder_receives_no_gradients() {
    let cfg = ModelConfig::tiny();
    let (m, mut store) = model::<f32>(&cfg, 6);
    assert!(m.set_encoder_frozen(&mut store, true) > 0);
    assert!(m.encoder_frozen(&store));
    let pairs = two_class_scene(2);
    let refs: Vec<_> = pairs.iter().collect();
    let batch = make_batch::<f32>(&refs, &Vocabulary::default(), 8).unwrap();
    let mut g = Graph::with_params(&store, Mode::Train);
    let a = g.constant(batch.img_a);
    let b = g.constant(batch.img_b);
    let pred = m.forward(&mut g, a, b, &batch.prompts).unwrap();
    let loss = lgcd_core::loss::total_loss(&mut g, &pred.maps, &batch.mask, &Default::default()).unwrap();
    let grads = g.backward(loss.total).unwrap();
    let mut trainable = 0;
    for (id, p) in store.params() {
        if p.name.starts_with(ENCODER_PREFIX) {
            assert!(grads.param(id).is_none(), "{} has a gradient", p.name);
        } else if grads.param(id).is_some() {
            trainable += 1;
        }
    }
    assert!(trainable > 0);
    grads.apply(&mut store);
    for (_, p) in store.params().filter(|(_, p)| p.name.starts_with(ENCODER_PREFIX)) {
        assert!(p.grad.as_ref().map_or(true, |g| g.data().iter().all(|&v| v == 0.0)));
    }
}
