use std::f64::consts::PI;

use criterion::{black_box, criterion_group, criterion_main, Criterion};
use parahyp::control::moment::{moment_gram, MomentOptions};
use parahyp::dynamics::evolve;
use parahyp::harness::scenario::nscl;
use parahyp::numerics::c;
use parahyp::spectral::{projection_split, separation_radius, BranchTable};
use parahyp::{FourierState, TorusSubset};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn kernels(cr: &mut Criterion) {
    let sys = nscl(1.0, 1.0, 1.0, 1.4, 1.0).unwrap();
    let sep = separation_radius(&sys).unwrap();
    let omega = TorusSubset::arc(0.0, PI).unwrap();

    cr.bench_function("projection_split", |b| {
        b.iter(|| projection_split(&sys, black_box(c(0.0, 0.2)), sep.big_r).unwrap())
    });

    let f0 = FourierState::random(64, 2, 1.0, &mut ChaCha8Rng::seed_from_u64(1));
    cr.bench_function("evolve_nmax64", |b| b.iter(|| evolve(&sys, black_box(&f0), None, 0.5).unwrap()));

    cr.bench_function("branch_table_nmax32", |b| {
        b.iter(|| BranchTable::build(&sys, sep, black_box(32)).unwrap())
    });

    let table = BranchTable::build(&sys, sep, 16).unwrap();
    let opts = MomentOptions::default();
    cr.bench_function("moment_gram_n12", |b| {
        b.iter(|| moment_gram(&sys, &table, 1.0, black_box(12), &omega, &opts).unwrap())
    });
}

criterion_group!(benches, kernels);
criterion_main!(benches);
