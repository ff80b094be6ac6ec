#![allow(dead_code)]

use lgcd_core::data::{generate_scene, BiTemporalPair, EventKind, Geometry, ObjectClass, ObjectEvent, SceneSpec};
use lgcd_core::{ChangeDetector, ModelConfig};
use lgcd_tensor::{init, ParamStore, Real, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn model<T: Real>(cfg: &ModelConfig, seed: u64) -> (ChangeDetector, ParamStore<T>) {
    let mut store = ParamStore::new();
    let m = ChangeDetector::new(cfg, 5, &mut store, &mut rng(seed)).unwrap();
    (m, store)
}

/// Uniform values in [0, 1).
pub fn image<T: Real>(shape: &[usize], seed: u64) -> Tensor<T> {
    init::uniform(shape.to_vec(), 1.0, &mut rng(seed)).map(|v: T| (v + T::one()) * T::lit(0.5))
}

pub fn normal<T: Real>(shape: &[usize], seed: u64) -> Tensor<T> {
    init::normal(shape.to_vec(), 1.0, &mut rng(seed))
}

/// A 64×64 scene with one appearing building and one appearing road.
pub fn two_class_scene(seed: u64) -> Vec<BiTemporalPair> {
    let spec = SceneSpec {
        id: format!("s{seed}"),
        seed,
        events: vec![
            ObjectEvent {
                class: ObjectClass::Building,
                geometry: Geometry::Square { top: 6, left: 6, side: 14 },
                event: EventKind::Appear,
            },
            ObjectEvent {
                class: ObjectClass::Road,
                geometry: Geometry::Line { y0: 40.0, x0: 4.0, y1: 56.0, x1: 60.0, width: 4.0 },
                event: EventKind::Appear,
            },
        ],
    };
    generate_scene(&spec, 64, 64).unwrap()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
