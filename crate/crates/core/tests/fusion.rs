mod common;

use common::{image, max_abs_diff, model, normal};
use lgcd_core::adapters::AdapterStack;
use lgcd_core::attention::key_mask;
use lgcd_core::encoders::FeaturePyramid;
use lgcd_core::tfam::{attention_heatmap, Tfam};
use lgcd_core::{Error, ModelConfig};
use lgcd_tensor::{Graph, Mode, ParamStore, Tensor, Var};

fn pyramid(g: &mut Graph<'_, f64>, cfg: &ModelConfig, b: usize, size: usize, seed: u64) -> FeaturePyramid {
    let levels: Vec<Var> = (0..4)
        .map(|i| {
            let s = size >> (i + 2);
            g.constant(normal(&[b, cfg.channels(i), s, s], seed + i as u64))
        })
        .collect();
    FeaturePyramid {
        levels: levels.try_into().unwrap(),
    }
}

fn adapters(cfg: &ModelConfig) -> (AdapterStack, ParamStore<f64>) {
    let mut store = ParamStore::new();
    let a = AdapterStack::new(&mut store, cfg, &mut common::rng(1)).unwrap();
    (a, store)
}

#[test]
fn fused_level_zero_has_two_adapter_widths() {
    let cfg = ModelConfig::default();
    let (a, store) = adapters(&cfg);
    let mut g = Graph::with_params(&store, Mode::Train);
    let p1 = pyramid(&mut g, &cfg, 2, 64, 10);
    let p2 = pyramid(&mut g, &cfg, 2, 64, 20);
    let fused = a.adapt_and_fuse(&mut g, &p1, &p2, true).unwrap();
    assert_eq!(g.shape(fused[0]), &[2, 128, 16, 16]);
    for (i, &f) in fused.iter().enumerate() {
        assert_eq!(g.shape(f), &[2, 2 * cfg.d_a, 16 >> i, 16 >> i]);
    }
}

fn halves(g: &Graph<'_, f64>, v: Var, d_a: usize) -> (Vec<f64>, Vec<f64>) {
    let s = g.shape(v).to_vec();
    let plane = s[2] * s[3];
    let data = g.value(v).data();
    let (mut first, mut second) = (Vec::new(), Vec::new());
    for b in 0..s[0] {
        let base = b * s[1] * plane;
        first.extend_from_slice(&data[base..base + d_a * plane]);
        second.extend_from_slice(&data[base + d_a * plane..base + 2 * d_a * plane]);
    }
    (first, second)
}

#[test]
fn identical_inputs_give_identical_halves() {
    let cfg = ModelConfig::tiny();
    let (a, store) = adapters(&cfg);
    for train in [false, true] {
        let mode = if train { Mode::Train } else { Mode::Eval };
        let mut g = Graph::with_params(&store, mode);
        let p = pyramid(&mut g, &cfg, 2, 64, 30);
        let fused = a.adapt_and_fuse(&mut g, &p, &p, train).unwrap();
        for f in fused {
            let (x, y) = halves(&g, f, cfg.d_a);
            assert_eq!(x, y);
        }
    }
}

#[test]
fn swapping_the_pair_swaps_the_halves() {
    let cfg = ModelConfig::tiny();
    let (a, store) = adapters(&cfg);
    for train in [false, true] {
        let mode = if train { Mode::Train } else { Mode::Eval };
        let mut g = Graph::with_params(&store, mode);
        let p1 = pyramid(&mut g, &cfg, 2, 64, 40);
        let p2 = pyramid(&mut g, &cfg, 2, 64, 50);
        let f12 = a.adapt_and_fuse(&mut g, &p1, &p2, train).unwrap();
        let f21 = a.adapt_and_fuse(&mut g, &p2, &p1, train).unwrap();
        for i in 0..4 {
            let (x1, y1) = halves(&g, f12[i], cfg.d_a);
            let (x2, y2) = halves(&g, f21[i], cfg.d_a);
            // batch statistics see the same pixels in a different order
            let tol = if train { 1e-12 } else { 0.0 };
            assert!(max_abs_diff(&x1, &y2) <= tol);
            assert!(max_abs_diff(&y1, &x2) <= tol);
        }
    }
}

#[test]
fn adapter_outputs_are_nonnegative() {
    let cfg = ModelConfig::tiny();
    let (a, store) = adapters(&cfg);
    let mut g = Graph::with_params(&store, Mode::Train);
    let p = pyramid(&mut g, &cfg, 2, 64, 60);
    for (i, adapter) in a.scales.iter().enumerate() {
        let y = adapter.forward(&mut g, p.levels[i], true).unwrap();
        assert!(g.value(y).data().iter().all(|&v| v >= 0.0));
    }
}

#[test]
fn adapter_parameter_count() {
    let cfg = ModelConfig::default();
    let (a, store) = adapters(&cfg);
    for i in 0..4 {
        let conv: usize = store
            .params()
            .filter(|(_, p)| p.name.starts_with(&format!("adapter.scale{i}.conv.")))
            .map(|(_, p)| p.value.numel())
            .sum();
        let bn: usize = store
            .params()
            .filter(|(_, p)| p.name.starts_with(&format!("adapter.scale{i}.bn.")))
            .map(|(_, p)| p.value.numel())
            .sum();
        let c = cfg.channels(i);
        assert_eq!(conv, a.conv_params(c));
        assert_eq!(conv, cfg.d_a * c + cfg.d_a);
        assert_eq!(bn, 2 * cfg.d_a);
    }
}

#[test]
fn mismatched_pyramids_are_rejected() {
    let cfg = ModelConfig::tiny();
    let (a, store) = adapters(&cfg);
    let mut g = Graph::with_params(&store, Mode::Eval);
    let p1 = pyramid(&mut g, &cfg, 1, 64, 1);
    let p2 = pyramid(&mut g, &cfg, 1, 32, 1);
    assert!(matches!(
        a.adapt_and_fuse(&mut g, &p1, &p2, false),
        Err(Error::TemporalPair { level: 0, .. })
    ));
}

struct Block {
    tfam: Tfam,
    store: ParamStore<f32>,
    cfg: ModelConfig,
}

fn block(cfg: ModelConfig) -> Block {
    let mut store = ParamStore::new();
    let tfam = Tfam::new(&mut store, &cfg, 1, &mut common::rng(2)).unwrap();
    Block { tfam, store, cfg }
}

/// Runs cross-attention of a fixed visual grid over `words: [1, L, d_t]`.
fn attend(b: &Block, words: &Tensor<f32>) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut g = Graph::with_params(&b.store, Mode::Eval);
    let f = g.constant(normal(&[1, 2 * b.cfg.d_a, 4, 4], 3));
    let w = g.constant(words.clone());
    let (out, trace) = b.tfam.cross_attend(&mut g, f, w, None).unwrap();
    assert_eq!(g.shape(out), &[1, b.cfg.d_m, 4, 4]);
    (
        g.value(out).to_f64_vec(),
        g.value(trace.weights).to_f64_vec(),
        g.value(trace.context).to_f64_vec(),
    )
}

fn words_of(rows: &[Vec<f32>]) -> Tensor<f32> {
    let d = rows[0].len();
    Tensor::new([1, rows.len(), d], rows.concat()).unwrap()
}

fn word_rows(n: usize, d: usize, seed: u64) -> Vec<Vec<f32>> {
    normal::<f32>(&[n, d], seed).data().chunks(d).map(<[f32]>::to_vec).collect()
}

#[test]
fn single_word_gets_all_the_attention() {
    let b = block(ModelConfig::default());
    let rows = word_rows(1, b.cfg.d_t, 4);
    let words = words_of(&rows);
    let (_, weights, context) = attend(&b, &words);
    assert!(weights.iter().all(|&w| w == 1.0));
    // context rows are W_v applied to the word, for every visual token
    let mut g = Graph::with_params(&b.store, Mode::Eval);
    let w = g.constant(words);
    let v = b.tfam.cross.attn.w_v.forward(&mut g, w).unwrap();
    let v = g.value(v).to_f64_vec();
    for row in context.chunks(b.cfg.d_m) {
        assert!(max_abs_diff(row, &v) < 1e-6);
    }
}

#[test]
fn word_permutation_does_not_change_the_output() {
    let b = block(ModelConfig::default());
    let rows = word_rows(5, b.cfg.d_t, 5);
    let (base, weights, _) = attend(&b, &words_of(&rows));
    for row in weights.chunks(5) {
        assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-6);
    }
    for perm in [[4, 3, 2, 1, 0], [1, 0, 3, 4, 2], [2, 4, 1, 0, 3]] {
        let permuted: Vec<Vec<f32>> = perm.iter().map(|&i| rows[i].clone()).collect();
        let (out, ..) = attend(&b, &words_of(&permuted));
        assert!(max_abs_diff(&base, &out) <= 1e-5);
    }
}

#[test]
fn repeated_word_matches_single_word() {
    let b = block(ModelConfig::default());
    let rows = word_rows(1, b.cfg.d_t, 6);
    let (one, ..) = attend(&b, &words_of(&rows));
    let (three, ..) = attend(&b, &words_of(&[rows[0].clone(), rows[0].clone(), rows[0].clone()]));
    assert!(max_abs_diff(&one, &three) <= 1e-5);
}

#[test]
fn padded_words_are_ignored() {
    let b = block(ModelConfig::tiny());
    let rows = word_rows(2, b.cfg.d_t, 7);
    let (short, ..) = attend(&b, &words_of(&rows));
    let noise = word_rows(1, b.cfg.d_t, 8);
    let padded = words_of(&[rows[0].clone(), rows[1].clone(), noise[0].clone()]);
    let mut g = Graph::with_params(&b.store, Mode::Eval);
    let f = g.constant(normal(&[1, 2 * b.cfg.d_a, 4, 4], 3));
    let w = g.constant(padded);
    let mask = key_mask::<f32>(&[2], 3, 0);
    // a single sample at full length needs an explicit mask here
    let mask = mask.or_else(|| Some(Tensor::new([1, 1, 1, 3], vec![0.0, 0.0, -1e9]).unwrap()));
    let (out, _) = b.tfam.cross_attend(&mut g, f, w, mask.as_ref()).unwrap();
    assert!(max_abs_diff(&short, &g.value(out).to_f64_vec()) <= 1e-5);
}

fn set(store: &mut ParamStore<f64>, name: &str, v: f64) {
    let id = store.find_param(name).unwrap();
    store.param_mut(id).value.data_mut().iter_mut().for_each(|x| *x = v);
}

#[test]
fn gate_halves_input_at_zero_preactivation() {
    let cfg = ModelConfig::tiny();
    let mut store = ParamStore::<f64>::new();
    let t = Tfam::new(&mut store, &cfg, 0, &mut common::rng(9)).unwrap();
    set(&mut store, "tfam.scale0.gate.weight", 0.0);
    set(&mut store, "tfam.scale0.gate.bias", 0.0);
    let mut g = Graph::with_params(&store, Mode::Eval);
    let x = normal::<f64>(&[2, cfg.d_m, 5, 5], 10);
    let xv = g.constant(x.clone());
    let (y, gate) = t.gate.forward(&mut g, xv).unwrap();
    assert_eq!(g.shape(gate), &[2, 1, 5, 5]);
    for (a, b) in g.value(y).data().iter().zip(x.data()) {
        assert_eq!(*a, 0.5 * b);
    }
}

#[test]
fn saturated_gate_passes_input_through() {
    let cfg = ModelConfig::tiny();
    let mut store = ParamStore::<f64>::new();
    let t = Tfam::new(&mut store, &cfg, 0, &mut common::rng(9)).unwrap();
    set(&mut store, "tfam.scale0.gate.weight", 0.0);
    set(&mut store, "tfam.scale0.gate.bias", 60.0);
    let mut g = Graph::with_params(&store, Mode::Eval);
    let x = normal::<f64>(&[1, cfg.d_m, 3, 3], 11);
    let xv = g.constant(x.clone());
    let (y, _) = t.gate.forward(&mut g, xv).unwrap();
    assert!(max_abs_diff(&g.value(y).to_f64_vec(), &x.to_f64_vec()) < 1e-12);
}

#[test]
fn gate_never_amplifies() {
    let cfg = ModelConfig::tiny();
    let mut store = ParamStore::<f64>::new();
    let t = Tfam::new(&mut store, &cfg, 0, &mut common::rng(12)).unwrap();
    let mut g = Graph::with_params(&store, Mode::Eval);
    let x = normal::<f64>(&[2, cfg.d_m, 6, 6], 13);
    let xv = g.constant(x.clone());
    let (y, gate) = t.gate.forward(&mut g, xv).unwrap();
    assert!(g.value(gate).data().iter().all(|&v| v > 0.0 && v < 1.0));
    for (a, b) in g.value(y).data().iter().zip(x.data()) {
        assert!(a.abs() <= b.abs());
    }
}

#[test]
fn every_scale_keeps_its_grid_and_heatmaps_are_normalised() {
    let cfg = ModelConfig::tiny();
    let (m, store) = model::<f32>(&cfg, 14);
    let mut g = Graph::with_params(&store, Mode::Eval);
    let a = g.constant(image(&[2, 3, 64, 64], 15));
    let b = g.constant(image(&[2, 3, 64, 64], 16));
    let pred = m.forward(&mut g, a, b, &[vec![1], vec![2, 4]]).unwrap();
    for (i, out) in pred.tfam.iter().enumerate() {
        let s = 16 >> i;
        assert_eq!(g.shape(pred.fused[i])[2..], [s, s]);
        assert_eq!(g.shape(out.fused), &[2, cfg.d_m, s, s]);
        let maps = attention_heatmap(g.value(out.trace.scores), &pred.text.lengths, s, s);
        assert_eq!(maps.len(), 2);
        for map in maps {
            assert_eq!(map.len(), s * s);
            assert!(map.iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }
}
