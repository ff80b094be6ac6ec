//! Pixel confusion counts and the five change-detection scores.

use std::fmt::Write as _;
use std::ops::{Add, AddAssign};

use crate::error::{Error, Result};

/// Pixel counts with change as the positive class.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    pub fn metrics(&self) -> Metrics {
        Metrics::from_counts(self)
    }
}

impl Add for ConfusionCounts {
    type Output = Self;

    fn add(self, o: Self) -> Self {
        Self {
            tp: self.tp + o.tp,
            fp: self.fp + o.fp,
            fn_: self.fn_ + o.fn_,
            tn: self.tn + o.tn,
        }
    }
}

impl AddAssign for ConfusionCounts {
    fn add_assign(&mut self, o: Self) {
        *self = *self + o;
    }
}

impl std::iter::Sum for ConfusionCounts {
    fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
        iter.fold(Self::default(), Add::add)
    }
}

/// Counts agreement between two binary maps of equal length.
pub fn confusion(pred: &[u8], target: &[u8]) -> Result<ConfusionCounts> {
    if pred.len() != target.len() {
        return Err(Error::Usage(format!(
            "prediction has {} pixels, target has {}",
            pred.len(),
            target.len()
        )));
    }
    let mut c = ConfusionCounts::default();
    for (&p, &t) in pred.iter().zip(target) {
        match (p, t) {
            (1, 1) => c.tp += 1,
            (1, 0) => c.fp += 1,
            (0, 1) => c.fn_ += 1,
            (0, 0) => c.tn += 1,
            _ => return Err(Error::Usage(format!("non-binary mask value ({p}, {t})"))),
        }
    }
    Ok(c)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Metrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub iou: f64,
    pub oa: f64,
    /// Some ratio had a zero denominator and was reported as 0.
    pub degenerate: bool,
}

impl Metrics {
    pub fn from_counts(c: &ConfusionCounts) -> Self {
        let mut degenerate = false;
        let mut ratio = |num: f64, den: f64| {
            if den == 0.0 {
                degenerate = true;
                0.0
            } else {
                num / den
            }
        };
        let (tp, fp, fn_, tn) = (c.tp as f64, c.fp as f64, c.fn_ as f64, c.tn as f64);
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = ratio(2.0 * precision * recall, precision + recall);
        let iou = ratio(tp, tp + fp + fn_);
        let oa = ratio(tp + tn, tp + fp + fn_ + tn);
        Self {
            precision,
            recall,
            f1,
            iou,
            oa,
            degenerate,
        }
    }
}

pub const CSV_HEADER: &str = "dataset,prompt,Pre,Rec,F1,IoU,OA";

/// One report line, scores in percent with two decimals.
pub fn csv_row(dataset: &str, prompt: &str, m: &Metrics) -> String {
    let mut s = format!("{dataset},{prompt}");
    for v in [m.precision, m.recall, m.f1, m.iou, m.oa] {
        write!(s, ",{:.2}", 100.0 * v).expect("string write");
    }
    s
}
