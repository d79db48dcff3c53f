//! Benchmarks for the hot paths: the correlation/angle bijection, the
//! analytic identity sampler, pairwise estimation, kernel fitting and
//! lookups, and a small end-to-end calibration.

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use std::hint::black_box;

use nabc_core::dgm::{Dgm, GaussianDgm};
use nabc_core::identity::sample_identity_matrices;
use nabc_core::kernel::{calibrate, matrix_inference, sample_from_kernels, KernelSpec};
use nabc_core::matrix::{angles_to_corr, corr_to_angles, DependenceMatrix};
use nabc_core::measures::{pairwise_matrix, MeasureKind, MeasureSpec};

fn baseline(p: usize) -> DependenceMatrix {
    // A mildly structured PD matrix at any size: geometric decay off the
    // diagonal.
    let mut values = vec![0.0; p * p];
    for i in 0..p {
        for j in 0..p {
            values[i * p + j] = 0.5f64.powi((i as i32 - j as i32).abs());
        }
    }
    DependenceMatrix::from_values(p, MeasureKind::Pearson, values).unwrap()
}

fn bench_angle_bijection(c: &mut Criterion) {
    for p in [5usize, 30] {
        let r = baseline(p);
        let theta = corr_to_angles(&r).unwrap();
        c.bench_function(&format!("corr_to_angles p={p}"), |b| {
            b.iter(|| corr_to_angles(black_box(&r)).unwrap())
        });
        c.bench_function(&format!("angles_to_corr p={p}"), |b| {
            b.iter(|| angles_to_corr(black_box(&theta)))
        });
    }
}

fn bench_identity_sampler(c: &mut Criterion) {
    c.bench_function("identity sampler p=5 n=126 x100", |b| {
        b.iter(|| sample_identity_matrices(5, 126, 100, black_box(7)).unwrap())
    });
}

fn bench_estimators(c: &mut Criterion) {
    let model = GaussianDgm::new(baseline(5)).unwrap();
    let panel = model.generate(160, 42).unwrap();
    for kind in [MeasureKind::Pearson, MeasureKind::Spearman, MeasureKind::Kendall] {
        let spec = MeasureSpec::new(kind);
        c.bench_function(&format!("pairwise {kind} p=5 n=160"), |b| {
            b.iter(|| pairwise_matrix(black_box(&panel), &spec).unwrap())
        });
    }
}

fn bench_kernel_pipeline(c: &mut Criterion) {
    let model = GaussianDgm::new(baseline(4)).unwrap();
    let spec = MeasureSpec::new(MeasureKind::Pearson);
    c.bench_function("calibrate p=4 n=80 reps=200", |b| {
        b.iter(|| {
            calibrate(&model, &spec, 80, 200, KernelSpec::default(), black_box(3)).unwrap()
        })
    });

    let set = calibrate(&model, &spec, 80, 500, KernelSpec::default(), 3).unwrap();
    c.bench_function("kernel cdf lookup", |b| {
        b.iter(|| black_box(set.cells()[0].kde().cdf(black_box(1.2))))
    });
    c.bench_function("kernel quantile lookup", |b| {
        b.iter(|| set.cells()[0].kde().quantile(black_box(0.8)).unwrap())
    });
    c.bench_function("sample 100 matrices from kernels", |b| {
        b.iter(|| sample_from_kernels(&set, 100, black_box(9)))
    });

    let observed = set.mean_matrix().clone();
    c.bench_function("matrix inference p=4", |b| {
        b.iter_batched(
            || observed.clone(),
            |obs| matrix_inference(&set, &obs, 0.05).unwrap(),
            BatchSize::SmallInput,
        )
    });
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(20);
    targets = bench_angle_bijection, bench_identity_sampler, bench_estimators, bench_kernel_pipeline
}
criterion_main!(benches);
