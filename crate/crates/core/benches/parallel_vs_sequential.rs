use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stiv_core::conic::Tolerances;
use stiv_core::sensitivity::{kappa_coord_cert, ConeSpec};
use stiv_core::sim::{map_replications, replicate, DgpParams, McConfig};

fn one_thread() -> rayon::ThreadPool {
    rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap()
}

fn replications(c: &mut Criterion) {
    let params = DgpParams::with_size(49);
    let cfg = McConfig::default();
    let reps = 16;
    let mut g = c.benchmark_group("replications");
    g.sample_size(10);
    g.bench_function(BenchmarkId::new("sequential", reps), |b| {
        b.iter(|| (0..reps as u64).map(|s| replicate(&params, &cfg, s).is_ok()).count())
    });
    let pool = one_thread();
    g.bench_function(BenchmarkId::new("rayon-1-thread", reps), |b| {
        b.iter(|| pool.install(|| map_replications(reps, 0, |s| replicate(&params, &cfg, s).is_ok())))
    });
    g.bench_function(BenchmarkId::new("rayon", reps), |b| {
        b.iter(|| map_replications(reps, 0, |s| replicate(&params, &cfg, s).is_ok()))
    });
    g.finish();
}

fn certificate_enumeration(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let psi = DMatrix::from_fn(12, 8, |_, _| rng.gen_range(-1.0..1.0));
    let cone = ConeSpec::new(0.1);
    let tol = Tolerances::default();
    let mut g = c.benchmark_group("certificate_enumeration");
    g.sample_size(10);
    let pool = one_thread();
    g.bench_function("rayon-1-thread", |b| {
        b.iter(|| pool.install(|| kappa_coord_cert(&psi, 0, 3, &cone, &tol).unwrap().value))
    });
    g.bench_function("rayon", |b| b.iter(|| kappa_coord_cert(&psi, 0, 3, &cone, &tol).unwrap().value));
    g.finish();
}

criterion_group!(benches, replications, certificate_enumeration);
criterion_main!(benches);
