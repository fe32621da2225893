use camtrap_core::model::{examples_from, Example, HeadLayout, Network};
use camtrap_core::synthgen::{generate_with, SynthConfig};
use camtrap_core::threshold::{default_grid, sweep_with, ScoredExample, SweepMetric};
use camtrap_core::Execution;
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::hint::black_box;

const MODES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn synth(c: &mut Criterion) {
    let cfg = SynthConfig {
        n_events: 4000,
        ..SynthConfig::default()
    };
    let mut g = c.benchmark_group("generate");
    for (name, exec) in MODES {
        g.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &e| {
            b.iter(|| generate_with(black_box(&cfg), e).unwrap())
        });
    }
    g.finish();
}

fn network(c: &mut Criterion) {
    let cfg = SynthConfig {
        n_events: 400,
        empty_fraction: 0.0,
        ..SynthConfig::default()
    };
    let data = generate_with(&cfg, Execution::default()).unwrap();
    let layout = HeadLayout::multitask(cfg.n_classes);
    let examples = examples_from(&data, &layout, None).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let net = Network::new(cfg.feature_dim, &[64, 32], layout, &mut rng).unwrap();
    let batch: Vec<&Example> = examples.iter().take(512).collect();
    let xs: Vec<Vec<f64>> = examples.iter().map(|e| e.features.clone()).collect();

    let mut g = c.benchmark_group("gradients_512");
    for (name, exec) in MODES {
        g.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &e| {
            b.iter(|| net.gradients_with(black_box(&batch), Some(0.01), e).unwrap())
        });
    }
    g.finish();

    let mut g = c.benchmark_group("predict_batch");
    for (name, exec) in MODES {
        g.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &e| {
            b.iter(|| net.predict_batch_with(black_box(&xs), e).unwrap())
        });
    }
    g.finish();
}

fn thresholds(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let data: Vec<ScoredExample> = (0..50_000)
        .map(|_| {
            let raw: Vec<f64> = (0..10).map(|_| rng.random_range(0.01..1.0)).collect();
            let s: f64 = raw.iter().sum();
            ScoredExample {
                probs: raw.into_iter().map(|x| x / s).collect(),
                truth: rng.random_range(0..10),
            }
        })
        .collect();
    let grid = default_grid();
    let mut g = c.benchmark_group("sweep");
    for (name, exec) in MODES {
        g.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &e| {
            b.iter(|| {
                sweep_with(
                    black_box(&data),
                    &grid,
                    SweepMetric::Top1,
                    Some(SweepMetric::TopK(5)),
                    e,
                )
                .unwrap()
            })
        });
    }
    g.finish();
}

criterion_group!(benches, synth, network, thresholds);
criterion_main!(benches);
