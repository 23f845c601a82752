//! Sequential versus rayon execution of the data-parallel kernels: a batch of
//! relaxation bounds, a batch of oracle enumerations, and PSD projections.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use dcqp::bound::{dnn_lower_bound, BoundSettings};
use dcqp::instance::{generate_synthetic, reduce, Distribution, ReducedInstance, SyntheticSpec};
use dcqp::linalg::psd_project;
use dcqp::oracle::global_qp_oracle;
use dcqp::par::{map_with, ExecMode};
use nalgebra::DMatrix;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn instances(count: u64, n: usize, m_ineq: usize) -> Vec<ReducedInstance> {
    (0..count)
        .map(|seed| {
            let spec = SyntheticSpec {
                n,
                m_ineq,
                m_eq: 0,
                distribution: Distribution::Uniform,
                density: 1.0,
                seed,
            };
            reduce(&generate_synthetic(&spec)).unwrap()
        })
        .collect()
}

fn modes() -> [(&'static str, ExecMode); 2] {
    [("sequential", ExecMode::Sequential), ("parallel", ExecMode::Parallel)]
}

fn bounds(c: &mut Criterion) {
    let insts = instances(8, 6, 4);
    let settings = BoundSettings::default();
    let mut group = c.benchmark_group("dnn_bound_batch");
    group.sample_size(10);
    for (label, mode) in modes() {
        group.bench_function(label, |b| {
            b.iter(|| map_with(mode, &insts, |i| dnn_lower_bound(i, &settings, None).map(|r| r.safe_bound)))
        });
    }
    group.finish();
}

fn oracle(c: &mut Criterion) {
    let insts = instances(8, 3, 3);
    let mut group = c.benchmark_group("oracle_batch");
    group.sample_size(10);
    for (label, mode) in modes() {
        group.bench_function(label, |b| {
            b.iter(|| map_with(mode, &insts, |i| global_qp_oracle(i).map(|r| r.value)))
        });
    }
    group.finish();
}

fn projections(c: &mut Criterion) {
    let mut group = c.benchmark_group("psd_project_batch");
    for size in [16usize, 64] {
        let mut rng = ChaCha8Rng::seed_from_u64(size as u64);
        let mats: Vec<DMatrix<f64>> = (0..32)
            .map(|_| {
                let g = DMatrix::from_fn(size, size, |_, _| rng.random::<f64>() - 0.5);
                &g + g.transpose()
            })
            .collect();
        for (label, mode) in modes() {
            group.bench_with_input(BenchmarkId::new(label, size), &mats, |b, mats| {
                b.iter(|| map_with(mode, mats, |m| psd_project(m).unwrap()))
            });
        }
    }
    group.finish();
}

criterion_group!(benches, bounds, oracle, projections);
criterion_main!(benches);
