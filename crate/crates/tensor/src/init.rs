//! Random initialisers.

use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};

use crate::real::Real;
use crate::tensor::Tensor;

/// `U(-bound, bound)` with `bound = 1/sqrt(fan_in)`, the usual default for
/// linear layers.
pub fn uniform_fan_in<T: Real, R: Rng + ?Sized>(
    shape: impl Into<Vec<usize>>,
    fan_in: usize,
    rng: &mut R,
) -> Tensor<T> {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    uniform(shape, bound, rng)
}

pub fn uniform<T: Real, R: Rng + ?Sized>(
    shape: impl Into<Vec<usize>>,
    bound: f64,
    rng: &mut R,
) -> Tensor<T> {
    let shape = shape.into();
    let dist = Uniform::new_inclusive(-bound, bound);
    let n = shape.iter().product();
    let data = (0..n).map(|_| T::lit(dist.sample(rng))).collect();
    Tensor::new(shape, data).expect("shape and data agree")
}

/// He-normal for layers followed by ReLU: `N(0, 2/fan_in)`.
pub fn kaiming_normal<T: Real, R: Rng + ?Sized>(
    shape: impl Into<Vec<usize>>,
    fan_in: usize,
    rng: &mut R,
) -> Tensor<T> {
    normal(shape, (2.0 / fan_in.max(1) as f64).sqrt(), rng)
}

pub fn normal<T: Real, R: Rng + ?Sized>(
    shape: impl Into<Vec<usize>>,
    std: f64,
    rng: &mut R,
) -> Tensor<T> {
    let shape = shape.into();
    let dist = Normal::new(0.0, std).expect("finite std");
    let n = shape.iter().product();
    let data = (0..n).map(|_| T::lit(dist.sample(rng))).collect();
    Tensor::new(shape, data).expect("shape and data agree")
}
