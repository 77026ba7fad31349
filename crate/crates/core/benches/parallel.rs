use std::hint::black_box;

use civrec_core::data::{generate_synthetic, SplitKind, SyntheticSpec};
use civrec_core::diffcore::{Graph, Tensor};
use civrec_core::eval::{evaluate, ScoreTable};
use civrec_core::par::Execution;
use civrec_core::trainer::{train, TrainConfig};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const MODES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("auto", Execution::Auto)];

fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::matrix(rows, cols, (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn matmul(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let a = random(512, 128, &mut rng);
    let b = random(128, 256, &mut rng);
    let mut group = c.benchmark_group("matmul_512x128x256");
    for (name, exec) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |bench| {
            bench.iter(|| {
                let mut g = Graph::with_execution(exec);
                let x = g.variable(a.clone());
                let y = g.constant(b.clone());
                let p = g.matmul(x, y).unwrap();
                let s = g.sum(p).unwrap();
                g.backward(s).unwrap();
                black_box(g.value(s).item())
            })
        });
    }
    group.finish();
}

fn evaluation(c: &mut Criterion) {
    let spec = SyntheticSpec {
        n_users: 1000,
        n_items: 800,
        positives_per_user: 20,
        ..SyntheticSpec::default()
    };
    let (bundle, _) = generate_synthetic(&spec).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let dim = 64;
    let table = ScoreTable {
        dim,
        users: random(bundle.n_users(), dim, &mut rng).into_values(),
        items: random(bundle.n_items(), dim, &mut rng).into_values(),
    };
    let mut group = c.benchmark_group("evaluate_1000x800");
    for (name, exec) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |bench| {
            bench.iter(|| black_box(evaluate(&table, &bundle, SplitKind::Test, &[20, 50], exec).unwrap()))
        });
    }
    group.finish();
}

fn epoch(c: &mut Criterion) {
    let (bundle, _) = generate_synthetic(&SyntheticSpec::default()).unwrap();
    let mut group = c.benchmark_group("train_epoch_full");
    group.sample_size(10);
    for (name, exec) in MODES {
        let mut config = TrainConfig::default();
        config.backbone.dim = 32;
        config.epochs = 1;
        config.execution = exec;
        group.bench_function(BenchmarkId::from_parameter(name), |bench| {
            bench.iter(|| black_box(train(config.clone(), &bundle).unwrap().reports))
        });
    }
    group.finish();
}

criterion_group!(benches, matmul, evaluation, epoch);
criterion_main!(benches);
