//! Sequential vs rayon comparison for the crate's data-parallel hot loops:
//! percolation trial batches, batch gradient accumulation, and exact-match
//! evaluation. Both paths produce bit-identical results; this suite measures
//! the throughput difference.

use charlab::model::{loss_and_grads, LossMask, ModelConfig, Parameters, TrainExample};
use charlab::par::{map_indexed_par, map_indexed_seq};
use charlab::percolation::{simulate, PropertyMode};
use charlab::rng::Rng;
use charlab::scaling::mup_plan;
use charlab::taskgen::make_example;
use charlab::train::evaluate;
use charlab::vocab::build_vocab;
use criterion::{criterion_group, criterion_main, Criterion};

fn percolation_trials(c: &mut Criterion) {
    let trial = |i: usize| {
        let mut rng = Rng::from_path(9, &[i as u64]);
        simulate(2048, 4, 52, PropertyMode::Chars, 0.5, &mut rng)
            .unwrap()
            .unwrap()
    };
    let mut group = c.benchmark_group("percolation_trials_x16");
    group.bench_function("sequential", |b| {
        b.iter(|| map_indexed_seq(16, trial))
    });
    group.bench_function("rayon", |b| b.iter(|| map_indexed_par(16, trial)));
    group.finish();
}

fn batch_setup() -> (ModelConfig, charlab::Vocabulary, Parameters, Vec<TrainExample>) {
    let cfg = ModelConfig {
        n_layers: 2,
        d_tokens: 64,
        n_heads: 4,
        char_enabled: true,
        d_chars: 32,
        char_heads: 4,
        max_tokens: 192,
        max_chars: 768,
        max_intra: 8,
        ..ModelConfig::default()
    };
    let v = build_vocab(1, 128, 4).unwrap();
    let p = Parameters::init(&cfg, v.len(), &mup_plan(&cfg, 1e-3), 3);
    let batch: Vec<TrainExample> = (0..16)
        .map(|i| {
            let mut rng = Rng::from_path(5, &[i]);
            TrainExample::from_instance(&make_example(&v, &mut rng, None).unwrap())
        })
        .collect();
    (cfg, v, p, batch)
}

fn batch_gradients(c: &mut Criterion) {
    let (cfg, v, p, batch) = batch_setup();
    let mut group = c.benchmark_group("loss_and_grads_batch16");
    group.sample_size(10);
    group.bench_function("sequential", |b| {
        b.iter(|| loss_and_grads(&p, &cfg, &v, &batch, LossMask::Full, true).unwrap())
    });
    group.bench_function("rayon", |b| {
        b.iter(|| loss_and_grads(&p, &cfg, &v, &batch, LossMask::Full, false).unwrap())
    });
    group.finish();
}

fn eval_generation(c: &mut Criterion) {
    let (cfg, v, p, _) = batch_setup();
    let mut group = c.benchmark_group("evaluate_4_per_task");
    group.sample_size(10);
    group.bench_function("sequential", |b| {
        b.iter(|| evaluate(&p, &cfg, &v, 4, 7, 0, None, true).unwrap())
    });
    group.bench_function("rayon", |b| {
        b.iter(|| evaluate(&p, &cfg, &v, 4, 7, 0, None, false).unwrap())
    });
    group.finish();
}

criterion_group!(benches, percolation_trials, batch_gradients, eval_generation);
criterion_main!(benches);
