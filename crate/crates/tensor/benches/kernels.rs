use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use lgcd_tensor::{init, parallel, Graph, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn tensor(shape: &[usize], seed: u64) -> Tensor<f32> {
    init::uniform(shape.to_vec(), 1.0, &mut ChaCha8Rng::seed_from_u64(seed))
}

const MODES: [(&str, bool); 2] = [("sequential", false), ("parallel", true)];

fn conv(c: &mut Criterion) {
    let x = tensor(&[4, 32, 32, 32], 1);
    let w = tensor(&[32, 32, 3, 3], 2);
    let mut group = c.benchmark_group("conv3x3_fwd_bwd");
    for (label, on) in MODES {
        group.bench_function(BenchmarkId::from_parameter(label), |b| {
            parallel::set_enabled(on);
            b.iter(|| {
                let mut g = Graph::new();
                let xv = g.variable(x.clone());
                let wv = g.variable(w.clone());
                let y = g.conv2d(xv, wv, None, 1, 1).unwrap();
                let l = g.mean(y);
                g.backward(l).unwrap()
            });
        });
    }
    group.finish();
}

fn matmul(c: &mut Criterion) {
    let a = tensor(&[4, 1024, 128], 3);
    let b = tensor(&[4, 16, 128], 4);
    let mut group = c.benchmark_group("attention_scores");
    for (label, on) in MODES {
        group.bench_function(BenchmarkId::from_parameter(label), |bch| {
            parallel::set_enabled(on);
            bch.iter(|| {
                let mut g = Graph::new();
                let av = g.constant(a.clone());
                let bv = g.constant(b.clone());
                let s = g.matmul_nt(av, bv).unwrap();
                g.softmax(s, 2).unwrap()
            });
        });
    }
    group.finish();
}

fn resize(c: &mut Criterion) {
    let x = tensor(&[4, 64, 16, 16], 5);
    let mut group = c.benchmark_group("bilinear_x4");
    for (label, on) in MODES {
        group.bench_function(BenchmarkId::from_parameter(label), |b| {
            parallel::set_enabled(on);
            b.iter(|| {
                let mut g = Graph::new();
                let xv = g.constant(x.clone());
                g.bilinear_resize(xv, 64, 64).unwrap()
            });
        });
    }
    group.finish();
}

criterion_group!(benches, conv, matmul, resize);
criterion_main!(benches);
