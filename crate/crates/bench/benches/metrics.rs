use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use relight_core::metrics::{fid, fid_infinity, local_fid_ranking, DEFAULT_EIG_FLOOR};

fn distances(c: &mut Criterion) {
    let mut group = c.benchmark_group("fid");
    group.sample_size(20);
    for d in [16, 64] {
        let a = relight_bench::embeddings(2000, d, 1);
        let b = relight_bench::embeddings(2000, d, 2);
        group.bench_with_input(BenchmarkId::new("fid_2000", d), &d, |bch, _| {
            bch.iter(|| fid(&a, &b).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("fid_infinity_2000", d), &d, |bch, _| {
            bch.iter(|| fid_infinity(&a, &b, 15, 0).unwrap())
        });
    }
    group.finish();
}

fn local_ranking(c: &mut Criterion) {
    let base = relight_bench::embeddings(1000, 32, 3);
    let cand = relight_bench::embeddings(200, 32, 4);
    let pairs: Vec<_> = (0..cand.len()).map(|i| (i, cand.point(i))).collect();
    c.bench_function("local_fid_ranking_1000x32_200", |b| {
        b.iter(|| local_fid_ranking(&base, &pairs, DEFAULT_EIG_FLOOR).unwrap())
    });
}

criterion_group!(benches, distances, local_ranking);
criterion_main!(benches);
