mod common;

use lgcd_core::loss::{map_terms, total_loss, CLAMP};
use lgcd_core::metrics::{confusion, csv_row, ConfusionCounts, Metrics, CSV_HEADER};
use lgcd_core::{Error, LossConfig};
use lgcd_tensor::gradcheck::check_fn;
use lgcd_tensor::{Graph, Tensor, Var};
use proptest::prelude::*;

/// Straight-line evaluation of the composite loss for one map.
fn oracle_terms(p: &[f64], y: &[f64], batch: usize, eps: f64) -> (f64, f64, f64) {
    let n = p.len() / batch;
    let ce = -p
        .iter()
        .zip(y)
        .map(|(&p, &y)| {
            let p = p.clamp(CLAMP, 1.0 - CLAMP);
            y * p.ln() + (1.0 - y) * (1.0 - p).ln()
        })
        .sum::<f64>()
        / p.len() as f64;
    let (mut iou, mut dice) = (0.0, 0.0);
    for b in 0..batch {
        let (ps, ys) = (&p[b * n..(b + 1) * n], &y[b * n..(b + 1) * n]);
        let i: f64 = ps.iter().zip(ys).map(|(a, b)| a * b).sum();
        let sp: f64 = ps.iter().sum();
        let sy: f64 = ys.iter().sum();
        iou += 1.0 - (i + eps) / (sp + sy - i + eps);
        dice += 1.0 - (2.0 * i + eps) / (sp + sy + eps);
    }
    (ce, iou / batch as f64, dice / batch as f64)
}

fn loss_of(maps: &[Vec<f64>], y: &[f64], shape: &[usize], cfg: &LossConfig) -> (f64, f64, f64, f64) {
    let mut g = Graph::<f64>::new();
    let vars: Vec<Var> = maps
        .iter()
        .map(|m| g.constant(Tensor::new(shape.to_vec(), m.clone()).unwrap()))
        .collect();
    let target = Tensor::new(shape.to_vec(), y.to_vec()).unwrap();
    let out = total_loss(&mut g, &vars, &target, cfg).unwrap();
    (g.value(out.total).item(), out.ce, out.iou, out.dice)
}

#[test]
fn default_weights() {
    let cfg = LossConfig::default();
    assert_eq!((cfg.alpha, cfg.beta, cfg.epsilon), (0.2, 0.1, 1.0));
    let (ce, iou, dice) = cfg.weights();
    assert!((ce - 0.7).abs() < 1e-15);
    assert_eq!((iou, dice), (0.2, 0.1));
}

#[test]
fn invalid_weights_are_config_errors() {
    for (a, b) in [(0.5, 0.5), (0.9, 0.2), (-0.1, 0.0), (0.0, -0.1)] {
        let cfg = LossConfig { alpha: a, beta: b, ..LossConfig::default() };
        assert!(matches!(cfg.validate(), Err(Error::Config(_))), "{a} {b}");
    }
}

#[test]
fn hand_evaluated_dice_and_iou() {
    let mut g = Graph::<f64>::new();
    let p = g.constant(Tensor::new([1, 1, 1, 2], vec![1.0, 0.0]).unwrap());
    let y = Tensor::new([1, 1, 1, 2], vec![1.0, 1.0]).unwrap();
    let t = map_terms(&mut g, p, &y, 1.0).unwrap();
    assert!((g.value(t.dice).item() - 0.25).abs() <= 1e-6);
    assert!((g.value(t.iou).item() - 1.0 / 3.0).abs() <= 1e-6);
}

#[test]
fn zero_weights_reduce_to_mean_cross_entropy() {
    let shape = [2, 1, 4, 4];
    let y: Vec<f64> = common::image::<f64>(&shape, 1).data().iter().map(|&v| f64::from(v > 0.5)).collect();
    let maps: Vec<Vec<f64>> = (0..6).map(|i| common::image::<f64>(&shape, 10 + i).data().to_vec()).collect();
    let cfg = LossConfig { alpha: 0.0, beta: 0.0, ..LossConfig::default() };
    let (total, ..) = loss_of(&maps, &y, &shape, &cfg);
    let mean_ce = maps.iter().map(|m| oracle_terms(m, &y, 2, 1.0).0).sum::<f64>() / 6.0;
    assert!((total - mean_ce).abs() <= 1e-7);
}

#[test]
fn shape_and_value_errors() {
    let mut g = Graph::<f64>::new();
    let p = g.constant(Tensor::full([1, 1, 2, 2], 0.5));
    let bad = Tensor::new([1, 1, 2, 2], vec![0.0, 1.0, 0.5, 1.0]).unwrap();
    assert!(map_terms(&mut g, p, &bad, 1.0).is_err());
    let wrong = Tensor::zeros([1, 1, 2, 3]);
    assert!(map_terms(&mut g, p, &wrong, 1.0).is_err());
}

#[test]
fn loss_falls_as_predictions_approach_targets() {
    let shape = [1, 1, 8, 8];
    let y: Vec<f64> = common::image::<f64>(&shape, 2).data().iter().map(|&v| f64::from(v > 0.6)).collect();
    let start = common::image::<f64>(&shape, 3).data().to_vec();
    let mut last = f64::INFINITY;
    for k in 0..=10 {
        let s = k as f64 / 10.0;
        let p: Vec<f64> = start.iter().zip(&y).map(|(a, b)| (1.0 - s) * a + s * b).collect();
        let maps = vec![p; 6];
        let (total, ..) = loss_of(&maps, &y, &shape, &LossConfig::default());
        assert!(total >= 0.0 && total < last, "step {k}: {total} vs {last}");
        last = total;
    }
    assert!(last < 1e-5);
}

#[test]
fn loss_gradient_matches_finite_differences() {
    let y = Tensor::new([2, 1, 2, 3], vec![1.0, 0.0, 1.0, 1.0, 0.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 1.0]).unwrap();
    let x = common::normal::<f64>(&[2, 1, 2, 3], 4);
    let r = check_fn("loss", &[x.clone(), x.map(|v| -v)], |g, v| {
        let maps: Vec<Var> = v.iter().map(|&x| g.sigmoid(x)).collect();
        let out = total_loss(g, &maps, &y, &LossConfig::default()).map_err(|e| match e {
            Error::Tensor(t) => t,
            other => panic!("{other}"),
        })?;
        Ok(out.total)
    })
    .unwrap();
    assert!(r.passes(1e-4), "{r:?}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn weights_sum_to_one(alpha in 0.0f64..1.0, frac in 0.0f64..1.0) {
        let beta = (1.0 - alpha) * frac * 0.999;
        let cfg = LossConfig { alpha, beta, ..LossConfig::default() };
        prop_assert!(cfg.validate().is_ok());
        let (a, b, c) = cfg.weights();
        prop_assert!((a + b + c - 1.0).abs() < 1e-12);
    }

    #[test]
    fn total_loss_matches_the_oracle(
        p in proptest::collection::vec(0.0f64..=1.0, 6 * 18),
        y in proptest::collection::vec(proptest::bool::ANY, 18),
        alpha in 0.0f64..0.5,
        beta in 0.0f64..0.4,
    ) {
        let shape = [2, 1, 3, 3];
        let y: Vec<f64> = y.into_iter().map(f64::from).collect();
        let maps: Vec<Vec<f64>> = p.chunks(18).map(<[f64]>::to_vec).collect();
        let cfg = LossConfig { alpha, beta, epsilon: 1.0 };
        let (total, ce, iou, dice) = loss_of(&maps, &y, &shape, &cfg);
        let terms: Vec<_> = maps.iter().map(|m| oracle_terms(m, &y, 2, 1.0)).collect();
        let want = terms
            .iter()
            .map(|(c, i, d)| (1.0 - alpha - beta) * c + alpha * i + beta * d)
            .sum::<f64>() / 6.0;
        prop_assert!(total >= 0.0);
        prop_assert!((total - want).abs() < 1e-9, "{} vs {}", total, want);
        prop_assert!((ce - terms.iter().map(|t| t.0).sum::<f64>() / 6.0).abs() < 1e-9);
        prop_assert!((iou - terms.iter().map(|t| t.1).sum::<f64>() / 6.0).abs() < 1e-9);
        prop_assert!((dice - terms.iter().map(|t| t.2).sum::<f64>() / 6.0).abs() < 1e-9);
    }
}

#[test]
fn perfect_and_inverted_predictions() {
    let target: Vec<u8> = (0..50).map(|i| u8::from(i % 7 == 0)).collect();
    let k = target.iter().filter(|&&v| v == 1).count() as u64;
    let c = confusion(&target, &target).unwrap();
    assert_eq!(c, ConfusionCounts { tp: k, fp: 0, fn_: 0, tn: 50 - k });
    let m = c.metrics();
    assert_eq!([m.precision, m.recall, m.f1, m.iou, m.oa], [1.0; 5]);
    assert!(!m.degenerate);
    let inv: Vec<u8> = target.iter().map(|v| 1 - v).collect();
    let c = confusion(&inv, &target).unwrap();
    assert_eq!((c.tp, c.tn), (0, 0));
}

#[test]
fn ten_by_ten_counts_and_scores() {
    let mut pred = vec![0u8; 100];
    let mut target = vec![0u8; 100];
    for i in [3, 4, 5] {
        pred[i] = 1;
    }
    for i in [4, 5, 6] {
        target[i] = 1;
    }
    let c = confusion(&pred, &target).unwrap();
    assert_eq!(c, ConfusionCounts { tp: 2, fp: 1, fn_: 1, tn: 96 });
    let m = c.metrics();
    assert!((m.precision - 2.0 / 3.0).abs() < 1e-12);
    assert!((m.recall - 2.0 / 3.0).abs() < 1e-12);
    assert!((m.f1 - 2.0 / 3.0).abs() < 1e-12);
    assert_eq!(m.iou, 0.5);
    assert_eq!(m.oa, 0.98);
    assert_eq!(csv_row("synthetic", "building", &m), "synthetic,building,66.67,66.67,66.67,50.00,98.00");
    assert_eq!(CSV_HEADER, "dataset,prompt,Pre,Rec,F1,IoU,OA");
}

#[test]
fn empty_change_is_degenerate() {
    let m = Metrics::from_counts(&ConfusionCounts { tp: 0, fp: 0, fn_: 0, tn: 10 });
    assert_eq!([m.precision, m.recall, m.f1, m.iou], [0.0; 4]);
    assert_eq!(m.oa, 1.0);
    assert!(m.degenerate);
}

#[test]
fn non_binary_masks_are_rejected() {
    assert!(matches!(confusion(&[0, 2], &[0, 1]), Err(Error::Usage(_))));
    assert!(matches!(confusion(&[0, 1], &[0, 1, 1]), Err(Error::Usage(_))));
}

fn brute(pred: &[u8], target: &[u8]) -> [u64; 4] {
    let count = |p: u8, t: u8| pred.iter().zip(target).filter(|&(&a, &b)| a == p && b == t).count() as u64;
    [count(1, 1), count(1, 0), count(0, 1), count(0, 0)]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn counts_match_brute_force(
        pred in proptest::collection::vec(0u8..=1, 256),
        target in proptest::collection::vec(0u8..=1, 256),
    ) {
        let c = confusion(&pred, &target).unwrap();
        prop_assert_eq!([c.tp, c.fp, c.fn_, c.tn], brute(&pred, &target));
        prop_assert_eq!(c.total(), 256);
        let m = c.metrics();
        for v in [m.precision, m.recall, m.f1, m.iou, m.oa] {
            prop_assert!((0.0..=1.0).contains(&v));
        }
        prop_assert!((m.f1 - 2.0 * m.iou / (1.0 + m.iou)).abs() <= 1e-12);
    }

    #[test]
    fn accumulated_counts_equal_pooled_counts(
        images in proptest::collection::vec(
            (proptest::collection::vec(0u8..=1, 64), proptest::collection::vec(0u8..=1, 64)), 1..8),
    ) {
        let summed: ConfusionCounts = images.iter().map(|(p, t)| confusion(p, t).unwrap()).sum();
        let pred: Vec<u8> = images.iter().flat_map(|(p, _)| p.clone()).collect();
        let target: Vec<u8> = images.iter().flat_map(|(_, t)| t.clone()).collect();
        prop_assert_eq!(summed, confusion(&pred, &target).unwrap());
        prop_assert_eq!(summed.metrics(), confusion(&pred, &target).unwrap().metrics());
    }
}
