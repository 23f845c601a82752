//! Seeded random instance generator.

use nalgebra::{DMatrix, DVector};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::QpInstance;
use crate::linalg::lambda_min;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Distribution {
    Normal,
    Uniform,
}

impl Distribution {
    /// One-letter tag used in generated file names.
    pub fn tag(self) -> char {
        match self {
            Distribution::Normal => 'n',
            Distribution::Uniform => 'u',
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticSpec {
    pub n: usize,
    pub m_ineq: usize,
    pub m_eq: usize,
    pub distribution: Distribution,
    /// Fraction of nonzero entries, in `(0, 1]`.
    pub density: f64,
    pub seed: u64,
}

fn draw(rng: &mut ChaCha8Rng, dist: Distribution) -> f64 {
    match dist {
        Distribution::Uniform => rng.random::<f64>(),
        Distribution::Normal => rng.sample(StandardNormal),
    }
}

fn sparse(rng: &mut ChaCha8Rng, rows: usize, cols: usize, spec: &SyntheticSpec) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(rows, cols);
    for i in 0..rows {
        for j in 0..cols {
            if rng.random::<f64>() < spec.density {
                m[(i, j)] = draw(rng, spec.distribution);
            }
        }
    }
    m
}

/// Difference of two sparse random matrices, so entries take both signs.
fn signed_sparse(rng: &mut ChaCha8Rng, rows: usize, cols: usize, spec: &SyntheticSpec) -> DMatrix<f64> {
    let pos = sparse(rng, rows, cols, spec);
    let neg = sparse(rng, rows, cols, spec);
    pos - neg
}

/// Generates an instance with indefinite `Q` and a known strictly interior point.
///
/// Returns the instance; the interior point used for the right-hand sides is
/// available through [`synthetic_interior_point`].
pub fn generate_synthetic(spec: &SyntheticSpec) -> QpInstance {
    generate_with_point(spec).0
}

/// The interior point `x₀` that the generator builds the right-hand sides from.
pub fn synthetic_interior_point(spec: &SyntheticSpec) -> DVector<f64> {
    generate_with_point(spec).1
}

fn generate_with_point(spec: &SyntheticSpec) -> (QpInstance, DVector<f64>) {
    assert!(spec.n >= 1 && spec.m_ineq >= 1, "n and m_ineq must be positive");
    assert!(spec.density > 0.0 && spec.density <= 1.0, "density must lie in (0, 1]");
    let n = spec.n;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let half = n.div_ceil(4);
    let q = loop {
        let l1 = sparse(&mut rng, half, n, spec);
        let l2 = sparse(&mut rng, half, n, spec);
        let q = l1.transpose() * &l1 - l2.transpose() * &l2;
        if lambda_min(&q).map(|l| l < 0.0).unwrap_or(false) {
            break q;
        }
    };
    let d = DVector::from_fn(n, |_, _| 0.01 * rng.random::<f64>());

    let raw = DVector::from_fn(n, |_, _| rng.random::<f64>());
    let x0 = &raw / raw.sum();
    let rand_rows = signed_sparse(&mut rng, spec.m_ineq, n, spec);
    let mut a = rand_rows.insert_row(spec.m_ineq, 1.0);
    let mut b = &a * &x0;
    for i in 0..b.len() {
        b[i] += 0.1 * (1.0 - rng.random::<f64>());
    }
    // Keep the normalization row exactly all-ones.
    a.row_mut(spec.m_ineq).fill(1.0);

    let a_eq = signed_sparse(&mut rng, spec.m_eq, n, spec);
    let b_eq = &a_eq * &x0;

    let name = format!("qp_{}_{}_{}", spec.distribution.tag(), spec.m_eq, spec.seed);
    let inst = QpInstance::new(
        name,
        q,
        d,
        a,
        b,
        a_eq,
        b_eq,
        Some(DVector::zeros(n)),
        Some(DVector::from_element(n, 1.0)),
    )
    .expect("generator produces consistent dimensions");
    (inst, x0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instance::{reduce, write_canonical};

    fn spec(n: usize, m: usize, meq: usize, dist: Distribution, density: f64, seed: u64) -> SyntheticSpec {
        SyntheticSpec {
            n,
            m_ineq: m,
            m_eq: meq,
            distribution: dist,
            density,
            seed,
        }
    }

    #[test]
    fn row_count_includes_normalization() {
        let s = spec(100, 50, 0, Distribution::Uniform, 0.1, 7);
        let inst = generate_synthetic(&s);
        assert_eq!(inst.m(), 51);
        assert!(inst.a_ineq.row(50).iter().all(|&v| v == 1.0));
        assert!(inst.lower.is_some() && inst.upper.is_some());
    }

    #[test]
    fn deterministic_bytes() {
        let s = spec(12, 6, 2, Distribution::Normal, 0.4, 99);
        assert_eq!(
            write_canonical(&generate_synthetic(&s)),
            write_canonical(&generate_synthetic(&s))
        );
    }

    #[test]
    fn interior_point_substitution() {
        let s = spec(10, 5, 3, Distribution::Normal, 0.3, 1);
        let inst = generate_synthetic(&s);
        let x0 = synthetic_interior_point(&s);
        let eq = &inst.a_eq * &x0 - &inst.b_eq;
        assert!(eq.amax() <= 1e-12);
        let ineq = &inst.a_ineq * &x0 - &inst.b_ineq;
        assert!(ineq.iter().all(|&r| r < 0.0));
        assert!(x0.iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn indefinite_and_bounded() {
        for seed in 0..10 {
            let s = spec(8, 4, seed as usize % 2, Distribution::Uniform, 0.5, seed);
            let inst = generate_synthetic(&s);
            assert!(lambda_min(&inst.q).unwrap() < 0.0);
            assert!(reduce(&inst).is_ok());
        }
    }
}
