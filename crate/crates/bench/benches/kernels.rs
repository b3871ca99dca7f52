use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rede_core::attention::{self, AttentionParams, PairBias};
use rede_core::distance::{conversation_buckets, utterance_distance_matrix};
use rede_core::task::{generate_task, TaskConfig};
use rede_core::testkit::random_tree;
use rede_core::train::{build_model, TrainConfig};
use rede_core::Mechanism;

fn random_matrix(rows: usize, cols: usize, rng: &mut impl Rng) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.random::<f64>() - 0.5)
}

fn distances(c: &mut Criterion) {
    let mut group = c.benchmark_group("utterance_distance_matrix");
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for n in [8, 32, 128] {
        let tree = random_tree(n, &mut rng);
        group.bench_with_input(BenchmarkId::from_parameter(n), &tree, |b, tree| {
            b.iter(|| utterance_distance_matrix(black_box(tree), 7))
        });
    }
    group.finish();
}

fn attention_kernels(c: &mut Criterion) {
    let task = TaskConfig::default();
    let data = generate_task(
        &TaskConfig {
            train_size: 1,
            dev_size: 0,
            test_size: 0,
            ..task.clone()
        },
        0,
    )
    .unwrap();
    let conv = &data.train[0].conversation;
    let grid = conversation_buckets(conv, 7).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let d = 64;
    let params = AttentionParams {
        heads: 4,
        wq: random_matrix(d, d, &mut rng),
        wk: random_matrix(d, d, &mut rng),
        wv: random_matrix(d, d, &mut rng),
        wo: random_matrix(d, d, &mut rng),
    };
    let x = random_matrix(conv.len(), d, &mut rng);
    let table = random_matrix(grid.bucket_count, d, &mut rng);
    let proj = random_matrix(4, d, &mut rng);
    let upstream = random_matrix(conv.len(), d, &mut rng);

    let mut group = c.benchmark_group("attention");
    let cases = [
        ("vanilla", PairBias::None),
        (
            "rede",
            PairBias::Learned {
                table: &table,
                proj: &proj,
                grid: &grid,
            },
        ),
        ("mask", PairBias::Mask(&grid)),
    ];
    for (name, bias) in cases {
        group.bench_function(format!("forward/{name}"), |b| {
            b.iter(|| attention::forward(black_box(x.view()), &params, bias).unwrap())
        });
        let (_, cache) = attention::forward(x.view(), &params, bias).unwrap();
        group.bench_function(format!("backward/{name}"), |b| {
            b.iter(|| attention::backward(&params, bias, black_box(&cache), upstream.view()))
        });
    }
    group.finish();
}

fn encoder_step(c: &mut Criterion) {
    let task = TaskConfig {
        train_size: 1,
        dev_size: 0,
        test_size: 0,
        ..TaskConfig::default()
    };
    let data = generate_task(&task, 0).unwrap();
    let example = &data.train[0];
    let mut group = c.benchmark_group("loss_and_grad");
    for mech in Mechanism::ALL {
        let cfg = TrainConfig {
            mechanism: mech,
            ..TrainConfig::default()
        };
        let model = build_model(&cfg, data.vocab.len(), task.classes, task.max_sequence_len()).unwrap();
        let input = model.prepare(&example.conversation).unwrap();
        group.bench_function(mech.name(), |b| {
            b.iter(|| model.loss_and_grad(black_box(&input), example.label).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, distances, attention_kernels, encoder_step);
criterion_main!(benches);
