use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use relight_core::radiosity::{assemble_kernel, RadiosityField};
use relight_core::Transport;

fn kernel_and_solves(c: &mut Criterion) {
    let mut group = c.benchmark_group("transport");
    for n in [25, 100, 200] {
        let scene = relight_bench::scene(n);
        group.bench_with_input(BenchmarkId::new("assemble_kernel", n), &scene, |b, s| {
            b.iter(|| assemble_kernel(s).unwrap())
        });
        let t = Transport::new(&scene).unwrap();
        let e = RadiosityField::new(scene.luminaires().mix(&[1.0 / 3.0; 3]).unwrap());
        group.bench_with_input(BenchmarkId::new("solve_direct", n), &e, |b, e| {
            b.iter(|| t.solve_direct(e).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("solve_neumann", n), &e, |b, e| {
            b.iter(|| t.solve_neumann(e, 1e-12, 10_000).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, kernel_and_solves);
criterion_main!(benches);
