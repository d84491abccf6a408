//! Microbenchmarks of the pipeline's hot kernels: PDE step, reservoir
//! advance, ridge training, patch extraction.

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use lsrc_core::reservoir::advance;
use lsrc_core::{
    barkley_step, build_adjacency, build_input_matrix, default_initial_condition, extract_patch,
    train_readout, BarkleyParams, PatchSpec, ReservoirMatrices, ReservoirSpec, ReservoirState,
};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn bench_barkley_step(c: &mut Criterion) {
    let p = BarkleyParams::default();
    let init = default_initial_condition(p.nx, p.ny, 1).unwrap();
    let mut state = init;
    for _ in 0..500 {
        state = barkley_step(&state, &p).unwrap();
    }
    c.bench_function("barkley_step_80x80", |b| {
        b.iter(|| barkley_step(&state, &p).unwrap())
    });
}

fn bench_reservoir_advance(c: &mut Criterion) {
    let spec = ReservoirSpec {
        r_dim: 400,
        ..ReservoirSpec::default()
    };
    let m = ReservoirMatrices {
        a: build_adjacency(&spec).unwrap(),
        w_in: build_input_matrix(spec.r_dim, 18, 2),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x: Vec<f64> = (0..18).map(|_| rng.gen::<f64>()).collect();
    let state = ReservoirState::zeros(spec.r_dim);
    c.bench_function("reservoir_advance_r400", |b| {
        b.iter(|| advance(&state, &m, &x).unwrap())
    });
}

fn bench_ridge_train(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let h = Array2::from_shape_fn((218, 2000), |_| rng.gen::<f64>() * 2.0 - 1.0);
    let y = Array2::from_shape_fn((2, 2000), |_| rng.gen::<f64>() * 2.0 - 1.0);
    c.bench_function("ridge_train_218x2000", |b| {
        b.iter_batched(
            || (h.clone(), y.clone()),
            |(h, y)| train_readout(&h.view(), &y.view(), 1e-6).unwrap(),
            BatchSize::LargeInput,
        )
    });
}

fn bench_patch_extraction(c: &mut Criterion) {
    let state = default_initial_condition(80, 80, 5).unwrap();
    let patch = PatchSpec { sigma: 3 };
    c.bench_function("extract_patch_grid_80x80", |b| {
        b.iter(|| {
            for i in 0..80 {
                for j in 0..80 {
                    extract_patch(&state, i, j, patch).unwrap();
                }
            }
        })
    });
}

criterion_group!(
    benches,
    bench_barkley_step,
    bench_reservoir_advance,
    bench_ridge_train,
    bench_patch_extraction
);
criterion_main!(benches);
