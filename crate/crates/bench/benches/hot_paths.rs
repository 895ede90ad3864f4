use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tunelab::agents::Mlp;
use tunelab::kmeans::kmeans_fit;
use tunelab::net::{link_tick, FlowState};
use tunelab::{EnergyConfig, KMeansConfig, LinkConfig, TransferParams};

fn mlp(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let net = Mlp::new(&[25, 128, 128, 6], &mut rng).unwrap();
    let x: Vec<f64> = (0..25).map(|_| rng.random_range(-1.0..1.0)).collect();
    c.bench_function("mlp_predict_25x128x128x6", |b| b.iter(|| net.predict(black_box(&x)).unwrap()));
    c.bench_function("mlp_forward_backward", |b| {
        b.iter(|| {
            let (out, cache) = net.forward(black_box(&x)).unwrap();
            net.backward(&cache, &out).unwrap()
        })
    });
}

fn link(c: &mut Criterion) {
    let cfg = LinkConfig::default();
    let ecfg = EnergyConfig::default();
    let mut flows: Vec<FlowState> = (1..=6).map(|v| FlowState::new(TransferParams::new(v, v))).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut now = 0.0;
    c.bench_function("link_tick_6_flows", |b| {
        b.iter(|| {
            now += 1.0;
            link_tick(&cfg, &ecfg, &mut flows, 2.5e9, now, &mut rng).unwrap()
        })
    });
}

fn kmeans(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let pts: Vec<Vec<f64>> = (0..2000)
        .map(|_| (0..10).map(|_| rng.random_range(0.0..1.0)).collect())
        .collect();
    let cfg = KMeansConfig {
        k: 64,
        n_init: 1,
        ..KMeansConfig::default()
    };
    let mut group = c.benchmark_group("kmeans");
    group.sample_size(10);
    group.bench_function("2000x10_k64", |b| b.iter(|| kmeans_fit(black_box(&pts), &cfg, 3).unwrap()));
    group.finish();
}

criterion_group!(benches, mlp, link, kmeans);
criterion_main!(benches);
