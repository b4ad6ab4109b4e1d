use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use coordnorm_core::grad::loss_grad;
use coordnorm_core::ntk::network_ntk;
use coordnorm_core::tasks::make_1d_task;
use coordnorm_core::{init_params, param_jacobian, sym_eig, DenseMatrix, NetworkConfig, NormKind};

fn random(rows: usize, cols: usize, seed: u64) -> DenseMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    DenseMatrix::from_fn(rows, cols, |_, _| rng.gen_range(-1.0..1.0))
}

fn matmul(c: &mut Criterion) {
    let mut group = c.benchmark_group("matmul");
    for n in [64usize, 256] {
        let (a, b) = (random(n, n, 1), random(n, n, 2));
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |bench, _| {
            bench.iter(|| black_box(a.matmul(&b).unwrap()))
        });
    }
    group.finish();
}

fn eigen(c: &mut Criterion) {
    let mut group = c.benchmark_group("sym_eig");
    group.sample_size(10);
    for n in [64usize, 256] {
        let a = random(n, n, 3);
        let k = a.matmul_tn(&a).unwrap();
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |bench, _| {
            bench.iter(|| black_box(sym_eig(&k).unwrap()))
        });
    }
    group.finish();
}

fn jacobian_and_kernel(c: &mut Criterion) {
    let mut group = c.benchmark_group("ntk");
    group.sample_size(10);
    let x = random(1, 128, 4);
    for kind in [NormKind::None, NormKind::Batch, NormKind::Cross] {
        let net = NetworkConfig::new(1, 4, 64, 1).with_norm(kind).with_seed(5);
        let p = init_params(&net).unwrap();
        group.bench_function(BenchmarkId::new("jacobian", kind.label()), |bench| {
            bench.iter(|| black_box(param_jacobian(&p, &x, &net).unwrap()))
        });
        group.bench_function(BenchmarkId::new("kernel", kind.label()), |bench| {
            bench.iter(|| black_box(network_ntk(&p, &x, &net).unwrap()))
        });
    }
    group.finish();
}

fn train_step(c: &mut Criterion) {
    let mut group = c.benchmark_group("loss_grad");
    let task = make_1d_task(&[2.0, 16.0, 48.0], &[1.0, 1.0, 1.0], 256).unwrap();
    for kind in [NormKind::None, NormKind::Cross] {
        let net = NetworkConfig::new(1, 4, 64, 1).with_norm(kind).with_seed(6);
        let p = init_params(&net).unwrap();
        group.bench_function(kind.label(), |bench| {
            bench.iter(|| {
                black_box(loss_grad(&p, &task.coords, &net, &task.measurements, &task.operator, task.loss).unwrap())
            })
        });
    }
    group.finish();
}

criterion_group!(benches, matmul, eigen, jacobian_and_kernel, train_step);
criterion_main!(benches);
