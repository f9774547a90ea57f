use std::path::Path;

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use softfem::energy::{assemble, HessianOptions};
use softfem::io::Scene;
use softfem::metrics::{chamfer_distance, NearestNeighbor, Point};
use softfem::scenes::{cantilever_scene, CantileverParams};
use softfem::System;

fn cantilever() -> System {
    Scene::from_config(cantilever_scene(&CantileverParams::default()), Path::new("."))
        .unwrap()
        .build()
        .unwrap()
}

fn assembly(c: &mut Criterion) {
    let sys = cantilever();
    let x = sys.model.mesh.rest_positions();
    c.bench_function("assemble cantilever", |b| {
        b.iter(|| assemble(&sys.model, &x, &[], None, HessianOptions::default()).unwrap())
    });
}

fn step(c: &mut Criterion) {
    let sys = cantilever();
    let state = sys.initial_state().unwrap();
    let dt = sys.control.dt_init;
    c.bench_function("backward Euler step cantilever", |b| {
        b.iter_batched(|| state.clone(), |s| sys.step(&s, dt).unwrap(), BatchSize::SmallInput)
    });
}

fn chamfer(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut cloud = |n: usize| -> Vec<Point> {
        (0..n).map(|_| [rng.random::<f64>(), rng.random::<f64>(), rng.random::<f64>()]).collect()
    };
    let (p, q) = (cloud(2000), cloud(2000));
    let mut group = c.benchmark_group("chamfer 2000 points");
    group.bench_function("grid", |b| b.iter(|| chamfer_distance(&p, &q, NearestNeighbor::Grid).unwrap()));
    group.bench_function("brute force", |b| {
        b.iter(|| chamfer_distance(&p, &q, NearestNeighbor::BruteForce).unwrap())
    });
    group.finish();
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(10);
    targets = assembly, step, chamfer
}
criterion_main!(benches);
