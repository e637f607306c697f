use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use lesionmap_core::autodiff::ops::{conv2d, conv2d_backward};
use lesionmap_core::evaluation::auc_one_vs_rest;
use lesionmap_core::gradcam::explain;
use lesionmap_core::imaging::clahe::clahe;
use lesionmap_core::imaging::{ClaheParams, Image};
use lesionmap_core::model::{ModelConfig, ModelGraph};
use lesionmap_core::Tensor;

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

fn conv(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = random(&mut rng, &[16, 32, 32]);
    let k = random(&mut rng, &[32, 16, 3, 3]);
    let b = random(&mut rng, &[32]);
    let y = conv2d(&x, &k, &b, 1, 1).unwrap();
    c.bench_function("conv2d 16→32 3x3 on 32x32", |bch| bch.iter(|| conv2d(black_box(&x), &k, &b, 1, 1).unwrap()));
    c.bench_function("conv2d backward 16→32 3x3 on 32x32", |bch| {
        bch.iter(|| conv2d_backward(black_box(&x), &k, &b, 1, 1, &y).unwrap())
    });
}

fn clahe_bench(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let img = Image::new(512, 512, 3, (0..512 * 512 * 3).map(|_| rng.gen()).collect()).unwrap();
    let params = ClaheParams::default();
    c.bench_function("clahe 512x512 rgb 8x8 tiles", |b| b.iter(|| clahe(black_box(&img), &params).unwrap()));
}

fn auc(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let scores: Vec<f64> = (0..10_000).map(|_| rng.gen()).collect();
    let labels: Vec<usize> = (0..10_000).map(|_| rng.gen_range(0..5)).collect();
    c.bench_function("auc one-vs-rest n=10000", |b| {
        b.iter(|| auc_one_vs_rest(black_box(&scores), &labels, 2).unwrap())
    });
}

fn gradcam(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let model = ModelGraph::build(ModelConfig::desknet(5).with_seed(4)).unwrap();
    let x = random(&mut rng, &[3, 64, 64]);
    c.bench_function("grad-cam desknet 64x64", |b| b.iter(|| explain(&model, black_box(&x), Some(3), 64, 64).unwrap()));
}

criterion_group!(benches, conv, clahe_bench, auc, gradcam);
criterion_main!(benches);
