use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use scaledgd::experiments::{ProblemSpec, Seeds};
use scaledgd::solver::{loss_and_gradient, step_gd, step_prec_gd, step_scaled_gd_lambda};
use scaledgd::*;

fn steps(c: &mut Criterion) {
    let mut group = c.benchmark_group("step");
    group.sample_size(10);
    for &n in &[60usize, 150] {
        let inst = ProblemSpec::new(n, 3, 4.0).build(&Seeds::single(1)).unwrap();
        let x = random_init(n, 5, 0.5, 2).unwrap();
        let (f, grad) = loss_and_gradient(&inst.op, inst.y(), &x).unwrap();
        group.bench_with_input(BenchmarkId::new("loss_and_gradient", n), &n, |b, _| {
            b.iter(|| loss_and_gradient(&inst.op, inst.y(), &x).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("update/gd", n), &n, |b, _| b.iter(|| step_gd(&x, &grad, 0.3)));
        group.bench_with_input(BenchmarkId::new("update/scaled-gd-lambda", n), &n, |b, _| {
            b.iter(|| step_scaled_gd_lambda(&x, &grad, 0.3, 0.05).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("update/prec-gd", n), &n, |b, _| {
            b.iter(|| step_prec_gd(&x, &grad, 0.3, f).unwrap())
        });
    }
    group.finish();
}

fn short_run(c: &mut Criterion) {
    let inst = ProblemSpec::new(60, 3, 4.0).build(&Seeds::single(1)).unwrap();
    let mut cfg = SolverConfig::new(Algorithm::ScaledGdLambda, 5);
    cfg.max_iters = 50;
    cfg.alpha = 1e-6;
    cfg.record_every = 10;
    cfg.stop = StoppingRule::patience(1000);
    let mut group = c.benchmark_group("run");
    group.sample_size(10);
    group.bench_function("scaled-gd-lambda/n60_50iters", |b| b.iter(|| inst.run(&cfg).unwrap()));
    group.finish();
}

criterion_group!(benches, steps, short_run);
criterion_main!(benches);
