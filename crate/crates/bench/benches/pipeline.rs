use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use icpcast_core::eval::{aggregate, score_segment};
use icpcast_core::forecast::lstm::{accumulate_gradients, forward_trace, param_count};
use icpcast_core::forecast::{es_forecast, EsConfig};
use icpcast_core::preprocess::smooth_downsample;
use icpcast_core::train::backward;
use icpcast_core::{LstmParams, SegmentKey};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn preprocess(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let sig: Vec<f64> = (0..540_000)
        .map(|i| 15.0 + (i as f64 / 9000.0).sin() + rng.random::<f64>())
        .collect();
    let mut g = c.benchmark_group("smooth_downsample");
    g.throughput(Throughput::Elements(sig.len() as u64));
    g.bench_function("3h_50hz", |b| {
        b.iter(|| smooth_downsample(black_box(&sig), 60_000, 3_000, 3_000).unwrap())
    });
    g.finish();
}

fn es(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let history: Vec<f64> = (0..60).map(|_| rng.random_range(5.0..25.0)).collect();
    c.bench_function("es_auto_60", |b| {
        b.iter(|| es_forecast(black_box(&history), 30, &EsConfig::default()).unwrap())
    });
}

fn lstm(c: &mut Criterion) {
    let mut g = c.benchmark_group("lstm_segment");
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x: Vec<f64> = (0..60).map(|_| rng.random_range(-2.0..2.0)).collect();
    let y: Vec<f64> = (0..30).map(|_| rng.random_range(-2.0..2.0)).collect();
    for hidden in [32, 128] {
        let params = LstmParams::init(hidden, &mut rng);
        g.bench_with_input(BenchmarkId::new("forward", hidden), &params, |b, p| {
            b.iter(|| forward_trace(p, black_box(&x), 30, None, &[]).unwrap())
        });
        g.bench_with_input(
            BenchmarkId::new("forward_backward", hidden),
            &params,
            |b, p| {
                let mut grad = vec![0.0; param_count(hidden)];
                b.iter(|| {
                    let tr = forward_trace(p, black_box(&x), 30, None, &[]).unwrap();
                    accumulate_gradients(p, &tr, &y, 1.0, &mut grad).unwrap()
                })
            },
        );
    }
    g.finish();

    let params = LstmParams::init(32, &mut rng);
    let batch: Vec<(&[f64], &[f64])> = (0..64).map(|_| (x.as_slice(), y.as_slice())).collect();
    c.bench_function("lstm_batch64_h32", |b| {
        b.iter(|| backward(&params, black_box(&batch), 0.5, 7).unwrap())
    });
}

fn metrics(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let scores: Vec<_> = (0..10_000)
        .map(|i| {
            let y: Vec<f64> = (0..30).map(|_| rng.random_range(0.0..30.0)).collect();
            let y_hat: Vec<f64> = y.iter().map(|v| v + rng.random_range(-3.0..3.0)).collect();
            score_segment(&y, &y_hat).unwrap().with_key(SegmentKey {
                patient_id: format!("P{}", i % 40),
                recording_id: format!("R{}", i % 90),
                seg_index: i,
            })
        })
        .collect();
    c.bench_function("aggregate_10k", |b| {
        b.iter(|| aggregate(black_box(scores.clone())).unwrap())
    });
}

criterion_group!(benches, preprocess, es, lstm, metrics);
criterion_main!(benches);
