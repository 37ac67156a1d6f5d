use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use quadsep_core::extremal::separation_rate;
use quadsep_core::sim::generate_data;
use quadsep_core::spectra::active_set;
use quadsep_core::utest::{u_statistic, u_statistic_pairwise};
use quadsep_core::{BasisSpec, CoefficientSpec, ExtremalSolution, Index, NoiseSpec};

fn statistic(c: &mut Criterion) {
    let spec = CoefficientSpec::sobolev(vec![2.0], vec![0.0]).unwrap();
    let basis = BasisSpec::dot(1);
    let sol = ExtremalSolution::at_threshold(&spec, (std::f64::consts::TAU * 20.5).powi(4), 0, 0.5).unwrap();
    let weights: Vec<(Index, f64)> = sol.weights();
    let mut g = c.benchmark_group("u_statistic");
    for n in [250usize, 1000] {
        let s = generate_data(&[], &basis, 1, n, NoiseSpec::Gaussian, 1).unwrap();
        g.bench_with_input(BenchmarkId::new("factorized", n), &s, |b, s| {
            b.iter(|| u_statistic(s.view(), black_box(&weights), &basis).unwrap())
        });
        g.bench_with_input(BenchmarkId::new("pairwise", n), &s, |b, s| {
            b.iter(|| u_statistic_pairwise(s.view(), black_box(&weights), &basis).unwrap())
        });
    }
    g.finish();
}

fn enumeration(c: &mut Criterion) {
    let one = CoefficientSpec::sobolev(vec![1.0], vec![0.25]).unwrap();
    let two = CoefficientSpec::sobolev(vec![1.0, 2.0], vec![0.0, 0.0]).unwrap();
    c.bench_function("active_set_1d", |b| b.iter(|| active_set(&one, black_box(1e8)).unwrap()));
    c.bench_function("active_set_2d", |b| b.iter(|| active_set(&two, black_box(1e6)).unwrap()));
}

fn tuning(c: &mut Criterion) {
    let spec = CoefficientSpec::sobolev(vec![1.0, 1.0], vec![0.0, 0.0]).unwrap();
    c.bench_function("separation_rate_2d", |b| b.iter(|| separation_rate(&spec, black_box(1_000_000), 0.05).unwrap()));
}

criterion_group!(benches, statistic, enumeration, tuning);
criterion_main!(benches);
