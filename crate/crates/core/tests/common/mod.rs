//! Seeded small instances shared by the integration and acceptance tests.
#![allow(dead_code)]

use dcqp::instance::ReducedInstance;
use dcqp::linalg::lambda_min;
use nalgebra::{DMatrix, DVector};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Indefinite QP on the unit box with `extra` random rows through a known
/// interior point, so `M = 2n + extra`.
pub fn fuzz_instance(seed: u64, n: usize, extra: usize) -> ReducedInstance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let q = loop {
        let g = DMatrix::from_fn(n, n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let q = (&g + g.transpose()) * 0.5;
        if lambda_min(&q).unwrap() < -1e-3 {
            break q;
        }
    };
    let d = DVector::from_fn(n, |_, _| 0.5 * rng.sample::<f64, _>(StandardNormal));
    let x0 = DVector::from_fn(n, |_, _| 0.2 + 0.6 * rng.random::<f64>());
    let m = 2 * n + extra;
    let mut a = DMatrix::zeros(m, n);
    let mut b = DVector::zeros(m);
    for j in 0..n {
        a[(j, j)] = 1.0;
        b[j] = 1.0;
        a[(n + j, j)] = -1.0;
    }
    for i in 2 * n..m {
        let row = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
        b[i] = row.dot(&x0) + 0.05 + 0.3 * rng.random::<f64>();
        a.set_row(i, &row.transpose());
    }
    ReducedInstance::from_rows(format!("fuzz_{seed}"), q, d, 0.0, a, b).unwrap()
}

/// The criterion-1 suite: 50 instances with `n ∈ {2, 3}` and `M ≤ 8`.
pub fn soundness_suite() -> Vec<ReducedInstance> {
    (0..50u64)
        .map(|s| {
            let n = 2 + (s % 2) as usize;
            let extra = (s as usize / 2) % (9 - 2 * n);
            fuzz_instance(1000 + s, n, extra)
        })
        .collect()
}

/// Larger instances for local-search checks (`n ≤ 8`, `M ≤ 20`).
pub fn search_suite(count: u64) -> Vec<ReducedInstance> {
    (0..count)
        .map(|s| {
            let n = 2 + (s % 7) as usize;
            let extra = (s as usize * 3) % (21 - 2 * n);
            fuzz_instance(5000 + s, n, extra)
        })
        .collect()
}

/// Region at the time cut `k` was generated.
pub fn region_before_cut(inst: &ReducedInstance, cuts: &[dcqp::cut::Cut], k: usize) -> ReducedInstance {
    cuts[..k].iter().enumerate().fold(inst.clone(), |r, (i, c)| c.apply(&r, i))
}

/// `n = 4` instances whose relaxation leaves a gap, so the driver has to cut.
pub fn cut_suite() -> Vec<ReducedInstance> {
    vec![fuzz_instance(20133, 4, 3), fuzz_instance(20495, 4, 0)]
}
