//! Parallel vs sequential timings of the hot kernels. Each benchmark runs
//! once on the rayon pool and once pinned to the calling thread through
//! `par::sequential`; without the `parallel` feature both are sequential.

use std::hint::black_box;

use copyloc::align::{DetectorParams, Method};
use copyloc::attention::{linear_attention, softmax_attention};
use copyloc::par;
use copyloc::pipeline::{generate_suite, predict_suite};
use copyloc::simgen::{dual_softmax_values, resize_values};
use copyloc::synth::Preset;
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn gaussian(seed: u64, rows: usize, cols: usize) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array2::from_shape_fn((rows, cols), |_| StandardNormal.sample(&mut rng))
}

/// Benchmarks `f` under both execution modes.
fn both_modes<F: Fn()>(
    c: &mut Criterion,
    group: &str,
    param: impl std::fmt::Display + Clone,
    f: F,
) {
    let mut g = c.benchmark_group(group);
    g.sample_size(10);
    g.bench_function(BenchmarkId::new("parallel", param.clone()), |b| b.iter(&f));
    g.bench_function(BenchmarkId::new("sequential", param), |b| {
        b.iter(|| par::sequential(&f))
    });
    g.finish();
}

fn attention(c: &mut Criterion) {
    for n in [512, 2048] {
        let (q, k, v) = (
            gaussian(1, n, 64) * 0.125,
            gaussian(2, n, 64) * 0.125,
            gaussian(3, n, 64),
        );
        both_modes(c, "softmax_attention", n, || {
            black_box(softmax_attention(q.view(), k.view(), v.view()).unwrap());
        });
        both_modes(c, "linear_attention", n, || {
            black_box(linear_attention(q.view(), k.view(), v.view()).unwrap());
        });
    }
}

fn similarity(c: &mut Criterion) {
    let s = gaussian(4, 600, 600) * 10.0;
    both_modes(c, "dual_softmax", "600x600", || {
        black_box(dual_softmax_values(s.view()));
    });
    let small = gaussian(5, 180, 150);
    both_modes(c, "resize", "180x150->640x640", || {
        black_box(resize_values(small.view(), (640, 640)).unwrap());
    });
}

fn detection(c: &mut Criterion) {
    let seeds: Vec<u64> = (0..8).collect();
    let pairs = generate_suite(Preset::Easy, &seeds, 256).unwrap();
    let params = DetectorParams::default();
    for method in [Method::Components, Method::Dtw] {
        both_modes(c, "detect_batch_8", method, || {
            black_box(predict_suite(&pairs, method, &params).unwrap());
        });
    }
}

criterion_group!(benches, attention, similarity, detection);
criterion_main!(benches);
