use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use splatkin_bench::{avatar, ring_views};
use splatkin_core::guidance::NoiseSchedule;
use splatkin_core::pipeline::Framing;
use splatkin_core::recon::{batch_loss, ReconConfig, TargetView};
use splatkin_core::schedule::{fit_schedule, PhaseTable, SearchGrid};
use splatkin_core::splat::{render, render_backward, RenderOptions};
use splatkin_core::vcr::{attn, refine_ring, Matrix, ToyDenoiser, VcrConfig};

fn splatting(c: &mut Criterion) {
    let cloud = avatar(2000, 1);
    let cam = Framing::default().camera(30.0, 10.0);
    let opts = RenderOptions::default();
    c.bench_function("render 2000 splats 64x64", |b| {
        b.iter(|| render(black_box(&cloud), &cam, [1.0; 3], &opts).unwrap())
    });
    let out = render(&cloud, &cam, [1.0; 3], &opts.with_trace()).unwrap();
    let upstream = out.color.map(|v| v - 0.5);
    c.bench_function("backward 2000 splats 64x64", |b| {
        b.iter_batched(
            || cloud.clone(),
            |mut cl| render_backward(&mut cl, &out, &upstream).unwrap(),
            criterion::BatchSize::SmallInput,
        )
    });
}

fn schedule(c: &mut Criterion) {
    let table = PhaseTable::default();
    let grid = SearchGrid::default();
    c.bench_function("fit schedule", |b| b.iter(|| fit_schedule(black_box(&table), &grid).unwrap()));
}

fn attention(c: &mut Criterion) {
    let m = |seed: f64| Matrix::from_fn(64, 32, |i, j| ((i * 32 + j) as f64 * seed).sin());
    let (q, k, v) = (m(0.37), m(0.91), m(1.13));
    c.bench_function("attention 64x32", |b| b.iter(|| attn(black_box(&q), &k, &v).unwrap()));
}

fn refinement(c: &mut Criterion) {
    let (ring, views) = ring_views(&avatar(500, 2), 64);
    let den = ToyDenoiser::new(64, 64, 0, NoiseSchedule::default()).unwrap();
    let cfg = VcrConfig::default();
    c.bench_function("refine ring of 16 at 64x64", |b| {
        b.iter(|| refine_ring(black_box(&views), &ring, &den, &cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap())
    });
}

fn reconstruction(c: &mut Criterion) {
    let cloud = avatar(500, 3);
    let framing = Framing::default();
    let opts = RenderOptions::default();
    let views: Vec<TargetView> = (0..8)
        .map(|k| {
            let cam = framing.camera(45.0 * k as f64, 0.0);
            let out = render(&cloud, &cam, [1.0; 3], &opts).unwrap();
            TargetView::new(cam, out.color.map(|v| v * 0.9), &out.alpha, 2, 2).unwrap()
        })
        .collect();
    let cfg = ReconConfig::default();
    let batch: Vec<usize> = (0..8).collect();
    c.bench_function("stage-2 batch of 8 at 64x64", |b| {
        b.iter(|| batch_loss(black_box(&cloud), &views, &batch, &cfg, &opts).unwrap())
    });
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(10);
    targets = splatting, schedule, attention, refinement, reconstruction
}
criterion_main!(benches);
