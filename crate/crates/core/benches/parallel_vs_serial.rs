//! Criterion benches comparing the rayon-parallel reductions against the
//! sequential fallback path, plus live shared-memory scaling over workers.
//!
//! Run with `cargo bench -p asyvr-core`. The parallel/sequential pairs call
//! routines that are bit-identical by construction; only the wall time
//! differs.

use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};

use asyvr_core::shared::{run_shared_async, SharedConfig, SharedMode};
use asyvr_core::{
    accum, gen_synthetic, gen_synthetic_regression, run_serial_svrg, FiniteSumProblem, ParamVector,
    ProblemKind, SvrgConfig, SyntheticRegressionSpec, SyntheticSpec,
};

fn quadratic(n: usize, p: usize) -> FiniteSumProblem {
    let ds = gen_synthetic_regression(&SyntheticRegressionSpec {
        n,
        p,
        noise: 0.2,
        seed: 7,
    })
    .expect("valid spec");
    FiniteSumProblem::new(ds, ProblemKind::LeastSquares, 1e-3).expect("valid problem")
}

fn mlp(n: usize, p: usize) -> FiniteSumProblem {
    let ds = gen_synthetic(&SyntheticSpec {
        n,
        p,
        num_classes: 10,
        noise: 0.1,
        seed: 7,
    })
    .expect("valid spec");
    FiniteSumProblem::new(ds, ProblemKind::Mlp { hidden: 16 }, 1e-3).expect("valid problem")
}

fn bench_grad_full(c: &mut Criterion) {
    let mut group = c.benchmark_group("grad_full");
    for &n in &[2_000usize, 20_000] {
        let problem = quadratic(n, 64);
        let x = problem.init_params(1);

        group.bench_with_input(BenchmarkId::new("parallel", n), &n, |b, _| {
            b.iter(|| black_box(problem.grad_full(&x).unwrap()))
        });
        group.bench_with_input(BenchmarkId::new("sequential", n), &n, |b, _| {
            b.iter(|| {
                let d = problem.dim();
                let mut g = accum::vector_sum_seq(problem.num_samples(), d, |lo, hi| {
                    problem.grad_chunk_partial(&x, lo, hi)
                });
                let inv_n = 1.0 / problem.num_samples() as f64;
                for v in &mut g {
                    *v *= inv_n;
                }
                black_box(g)
            })
        });
    }
    group.finish();
}

fn bench_mlp_loss(c: &mut Criterion) {
    let problem = mlp(4_000, 64);
    let x = problem.init_params(2);
    let mut group = c.benchmark_group("mlp_loss");
    group.bench_function("parallel", |b| {
        b.iter(|| black_box(problem.loss(&x).unwrap()))
    });
    group.bench_function("sequential", |b| {
        b.iter(|| {
            let n = problem.num_samples();
            let sum = accum::scalar_sum_seq(n, |i| problem.loss_sample(&x, i).unwrap());
            black_box(sum / n as f64)
        })
    });
    group.finish();
}

fn bench_shared_workers(c: &mut Criterion) {
    let problem = quadratic(4_000, 64);
    let x0 = ParamVector::zeros(problem.dim());
    let mut group = c.benchmark_group("svrg_epoch");
    group.sample_size(10);

    group.bench_function("serial", |b| {
        b.iter(|| {
            let cfg = SvrgConfig {
                epochs: 1,
                inner_iters: 200,
                batch_size: 10,
                eta: 1e-3,
                seed: 3,
                record_every_iter: false,
            };
            black_box(run_serial_svrg(&problem, &x0, &cfg).unwrap())
        })
    });
    for &workers in &[1usize, 2, 4] {
        group.bench_with_input(
            BenchmarkId::new("shared_live", workers),
            &workers,
            |b, &w| {
                b.iter(|| {
                    let cfg = SharedConfig {
                        epochs: 1,
                        inner_iters: 200,
                        batch_size: 10,
                        eta: 1e-3,
                        block_size: problem.dim(),
                        num_workers: w,
                        seed: 3,
                        mode: SharedMode::Live,
                        record_every_iter: false,
                    };
                    black_box(run_shared_async(&problem, &x0, &cfg).unwrap())
                })
            },
        );
    }
    group.finish();
}

criterion_group!(
    benches,
    bench_grad_full,
    bench_mlp_loss,
    bench_shared_workers
);
criterion_main!(benches);
