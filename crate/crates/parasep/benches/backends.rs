//! Sequential vs parallel backend comparison on the hot paths.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use parasep::eim::{build_interpolant_with, StopTol};
use parasep::grid::SampleGrid;
use parasep::linalg::DMat;
use parasep::Backend;

fn synthetic_grid(n_rows: usize, n_cols: usize) -> SampleGrid<f64> {
    let mus: Vec<f64> = (0..n_rows)
        .map(|i| 0.5 + 2.5 * i as f64 / (n_rows - 1) as f64)
        .collect();
    let xs: Vec<f64> = (0..n_cols)
        .map(|j| -1.0 + 2.0 * j as f64 / (n_cols - 1) as f64)
        .collect();
    let vals = DMat::from_fn(n_rows, n_cols, |i, j| (mus[i] * xs[j]).exp());
    SampleGrid::new(mus, xs, vals).unwrap()
}

fn backends() -> Vec<(&'static str, Backend)> {
    let mut v = vec![("sequential", Backend::Sequential)];
    if cfg!(feature = "parallel") {
        v.push(("parallel", Backend::Parallel));
    }
    v
}

fn bench_greedy_build(c: &mut Criterion) {
    let grid = synthetic_grid(200, 1600);
    let mut group = c.benchmark_group("greedy_build_200x1600_d12");
    for (name, backend) in backends() {
        group.bench_with_input(BenchmarkId::from_parameter(name), &backend, |b, &bk| {
            b.iter(|| build_interpolant_with(&grid, 12, StopTol::Absolute(0.0), bk).unwrap())
        });
    }
    group.finish();
}

fn bench_residual_scan(c: &mut Criterion) {
    let grid = synthetic_grid(400, 1600);
    let itp = build_interpolant_with(&grid, 10, StopTol::Absolute(0.0), Backend::Sequential)
        .unwrap();
    let mut group = c.benchmark_group("sup_residuals_400x1600_d10");
    for (name, backend) in backends() {
        group.bench_with_input(BenchmarkId::from_parameter(name), &backend, |b, &bk| {
            b.iter(|| itp.sup_residuals(&grid, bk))
        });
    }
    group.finish();
}

fn bench_kernel_assembly(c: &mut Criterion) {
    use parasep::kernel3d::KernelProblem;
    let problem = KernelProblem::unit_sphere(200, 1.0, [0.0, 0.0, 3.0]).unwrap();
    let mut group = c.benchmark_group("kernel_assemble_n200");
    for (name, backend) in backends() {
        group.bench_with_input(BenchmarkId::from_parameter(name), &backend, |b, &bk| {
            b.iter(|| problem.assemble_with(1.7, bk).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, bench_greedy_build, bench_residual_scan, bench_kernel_assembly);
criterion_main!(benches);
