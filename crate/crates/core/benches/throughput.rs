use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use hierarchy_core::liouvillian::{apply_adjoint, build_adjoint_superoperator, KossakowskiMatrix, LindbladSet, SpectrumSpec};
use hierarchy_core::par;
use hierarchy_core::topology::Topology;
use hierarchy_core::C64;
use std::hint::black_box;

fn pools() -> [(&'static str, Option<usize>); 2] {
    [("sequential", Some(1)), ("pool", None)]
}

fn superoperator(c: &mut Criterion) {
    let set = LindbladSet::two_body(&Topology::chain(4).unwrap()).unwrap();
    let k = KossakowskiMatrix::sample(set.count(), 4, 7, &SpectrumSpec::default()).unwrap();
    let mut g = c.benchmark_group("build_adjoint_l4_chain");
    g.sample_size(10);
    for (name, jobs) in pools() {
        g.bench_with_input(BenchmarkId::from_parameter(name), &jobs, |b, &jobs| {
            b.iter(|| par::with_jobs(jobs, || black_box(build_adjoint_superoperator(&set, &k).unwrap())))
        });
    }
    g.finish();
}

fn matrix_free(c: &mut Criterion) {
    let set = LindbladSet::two_body(&Topology::chain(5).unwrap()).unwrap();
    let k = KossakowskiMatrix::sample(set.count(), 5, 9, &SpectrumSpec::default()).unwrap();
    let v: Vec<C64> = (0..1024).map(|i| C64::new((i as f64).sin(), 0.0)).collect();
    let mut g = c.benchmark_group("apply_adjoint_l5_chain");
    g.sample_size(10);
    for (name, jobs) in pools() {
        g.bench_with_input(BenchmarkId::from_parameter(name), &jobs, |b, &jobs| {
            b.iter(|| par::with_jobs(jobs, || black_box(apply_adjoint(&set, &k, &v).unwrap())))
        });
    }
    g.finish();
}

criterion_group!(benches, superoperator, matrix_free);
criterion_main!(benches);
