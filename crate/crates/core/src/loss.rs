//! Composite segmentation loss over every predicted probability map:
//! weighted binary cross-entropy, soft IoU and soft Dice, averaged over maps.

use lgcd_tensor::{Graph, Real, Tensor, Var};

use crate::config::LossConfig;
use crate::error::{Error, Result};

/// Probabilities are clamped into `[CLAMP, 1 - CLAMP]` before the logarithm.
pub const CLAMP: f64 = 1e-7;

/// The loss node and its components, each averaged over maps.
#[derive(Clone, Copy, Debug)]
pub struct LossOutput {
    pub total: Var,
    pub ce: f64,
    pub iou: f64,
    pub dice: f64,
}

/// Per-map terms as graph nodes.
#[derive(Clone, Copy, Debug)]
pub struct MapTerms {
    pub ce: Var,
    pub iou: Var,
    pub dice: Var,
}

/// Loss terms for one probability map `p: [B, ...]` against a binary target
/// of the same shape. IoU and Dice are computed per sample and averaged over
/// the batch; cross-entropy is the mean over every pixel.
pub fn map_terms<T: Real>(g: &mut Graph<'_, T>, p: Var, target: &Tensor<T>, eps: f64) -> Result<MapTerms> {
    if g.shape(p) != target.shape() {
        return Err(Error::Usage(format!(
            "prediction {:?} and target {:?} differ in shape",
            g.shape(p),
            target.shape()
        )));
    }
    if target.data().iter().any(|&v| v != T::zero() && v != T::one()) {
        return Err(Error::Usage("target must be binary".into()));
    }
    let b = target.shape()[0];
    let n = target.numel() / b;
    let p = g.reshape(p, [b, n])?;
    let y = target.clone().reshape([b, n])?;
    let not_y = y.map(|v| T::one() - v);
    let y_sum: Vec<T> = y.data().chunks(n).map(|c| c.iter().copied().sum()).collect();
    let y_sum = Tensor::new([b], y_sum)?;

    let yv = g.constant(y);
    let not_yv = g.constant(not_y);
    let pc = g.clamp(p, CLAMP, 1.0 - CLAMP);
    let log_p = g.log(pc);
    let neg = g.mul_scalar(pc, -1.0);
    let one_minus = g.add_scalar(neg, 1.0);
    let log_q = g.log(one_minus);
    let a = g.mul(yv, log_p)?;
    let c = g.mul(not_yv, log_q)?;
    let ll = g.add(a, c)?;
    let mean_ll = g.mean(ll);
    let ce = g.mul_scalar(mean_ll, -1.0);

    let py = g.mul(p, yv)?;
    let inter = g.sum_axis(py, 1)?;
    let p_sum = g.sum_axis(p, 1)?;
    let y_eps = g.constant(y_sum.map(|v| v + T::lit(eps)));

    // IoU: 1 - (I + eps) / (P + Y - I + eps)
    let num = g.add_scalar(inter, eps);
    let diff = g.sub(p_sum, inter)?;
    let den = g.add(diff, y_eps)?;
    let ratio = g.div(num, den)?;
    let iou = one_minus_mean(g, ratio);

    // Dice: 1 - (2I + eps) / (P + Y + eps)
    let twice = g.mul_scalar(inter, 2.0);
    let num = g.add_scalar(twice, eps);
    let den = g.add(p_sum, y_eps)?;
    let ratio = g.div(num, den)?;
    let dice = one_minus_mean(g, ratio);

    Ok(MapTerms { ce, iou, dice })
}

fn one_minus_mean<T: Real>(g: &mut Graph<'_, T>, x: Var) -> Var {
    let m = g.mean(x);
    let m = g.mul_scalar(m, -1.0);
    g.add_scalar(m, 1.0)
}

/// `(1/n) Σ_i [(1-α-β)·CE_i + α·IoU_i + β·Dice_i]` over the maps.
pub fn total_loss<T: Real>(
    g: &mut Graph<'_, T>,
    maps: &[Var],
    target: &Tensor<T>,
    cfg: &LossConfig,
) -> Result<LossOutput> {
    cfg.validate()?;
    if maps.is_empty() {
        return Err(Error::Usage("no prediction maps".into()));
    }
    let (w_ce, w_iou, w_dice) = cfg.weights();
    let mut total: Option<Var> = None;
    let (mut ce, mut iou, mut dice) = (0.0, 0.0, 0.0);
    for &p in maps {
        let t = map_terms(g, p, target, cfg.epsilon)?;
        ce += g.value(t.ce).item().to_f64().unwrap_or(f64::NAN);
        iou += g.value(t.iou).item().to_f64().unwrap_or(f64::NAN);
        dice += g.value(t.dice).item().to_f64().unwrap_or(f64::NAN);
        let a = g.mul_scalar(t.ce, w_ce);
        let b = g.mul_scalar(t.iou, w_iou);
        let c = g.mul_scalar(t.dice, w_dice);
        let ab = g.add(a, b)?;
        let term = g.add(ab, c)?;
        total = Some(match total {
            Some(acc) => g.add(acc, term)?,
            None => term,
        });
    }
    let n = maps.len() as f64;
    let total = g.mul_scalar(total.expect("non-empty"), 1.0 / n);
    Ok(LossOutput {
        total,
        ce: ce / n,
        iou: iou / n,
        dice: dice / n,
    })
}
