use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use rand::Rng;
use shakeout::glm::{shakeout_reg_enumerated, shakeout_reg_exact, shakeout_reg_mc};
use shakeout::tensor::matmul;
use shakeout::{FcLayer, ForwardMode, GlmSpec, RngStream, ShakeoutParams, Tensor};

fn random(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = RngStream::new(seed, 0).generator();
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

fn bench_matmul(c: &mut Criterion) {
    let mut g = c.benchmark_group("matmul");
    for n in [64, 256, 512] {
        let (a, b) = (random(&[n, n], 1), random(&[n, n], 2));
        g.throughput(Throughput::Elements((2 * n * n * n) as u64));
        g.bench_with_input(BenchmarkId::from_parameter(n), &n, |bench, _| {
            bench.iter(|| matmul(black_box(&a), black_box(&b)).unwrap())
        });
    }
    g.finish();
}

fn bench_fc(c: &mut Criterion) {
    let (batch, inputs, outputs) = (64, 784, 256);
    let x = random(&[batch, inputs], 3);
    let grad = random(&[batch, outputs], 4);
    let mut g = c.benchmark_group("fc");
    for (name, noise) in [
        ("none", ShakeoutParams::none()),
        ("dropout", ShakeoutParams::dropout(0.5).unwrap()),
        ("shakeout", ShakeoutParams::shakeout(0.5, 0.1).unwrap()),
    ] {
        let mut layer = FcLayer::new(random(&[outputs, inputs], 5), Tensor::zeros(&[outputs]), noise).unwrap();
        let stream = RngStream::new(6, 0);
        g.bench_function(BenchmarkId::new("forward", name), |bench| {
            bench.iter(|| layer.forward(black_box(&x), ForwardMode::Train, &stream).unwrap())
        });
        g.bench_function(BenchmarkId::new("forward_backward", name), |bench| {
            bench.iter(|| {
                layer.forward(black_box(&x), ForwardMode::Train, &stream).unwrap();
                layer.backward(black_box(&grad)).unwrap()
            })
        });
    }
    g.finish();
}

fn bench_regularizer(c: &mut Criterion) {
    let spec = GlmSpec::logistic();
    let params = ShakeoutParams::shakeout(0.5, 0.5).unwrap();
    let mut g = c.benchmark_group("regularizer");
    for p in [2, 8] {
        let w = random(&[p], 7).into_data();
        let x = random(&[p], 8).into_data();
        g.bench_with_input(BenchmarkId::new("closed_form", p), &p, |bench, _| {
            bench.iter(|| shakeout_reg_exact(&spec, black_box(&w), black_box(&x), &params).unwrap())
        });
        g.bench_with_input(BenchmarkId::new("enumerated", p), &p, |bench, _| {
            bench.iter(|| shakeout_reg_enumerated(&spec, black_box(&w), black_box(&x), &params).unwrap())
        });
        let stream = RngStream::new(9, 0);
        g.bench_with_input(BenchmarkId::new("monte_carlo_1e4", p), &p, |bench, _| {
            bench.iter(|| shakeout_reg_mc(&spec, black_box(&w), black_box(&x), &params, 10_000, &stream).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, bench_matmul, bench_fc, bench_regularizer);
criterion_main!(benches);
