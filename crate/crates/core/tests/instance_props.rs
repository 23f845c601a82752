use dcqp::instance::{generate_synthetic, reduce, synthetic_interior_point, Distribution, SyntheticSpec};
use nalgebra::DVector;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn spec(seed: u64, m_eq: usize) -> SyntheticSpec {
    SyntheticSpec {
        n: 4,
        m_ineq: 3,
        m_eq,
        distribution: Distribution::Normal,
        density: 0.7,
        seed,
    }
}

#[test]
fn reduction_preserves_membership() {
    for seed in 0..5 {
        let inst = generate_synthetic(&spec(seed, 0));
        let red = reduce(&inst).unwrap();
        let x0 = synthetic_interior_point(&spec(seed, 0));
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut feasible = 0;
        for k in 0..1000 {
            // Half the samples near the interior point so both classes occur.
            let x = if k % 2 == 0 {
                DVector::from_fn(4, |_, _| 1.4 * rng.random::<f64>() - 0.2)
            } else {
                DVector::from_fn(4, |i, _| x0[i] + 0.2 * (rng.random::<f64>() - 0.5))
            };
            let a = inst.is_feasible(&x, 1e-9);
            assert_eq!(a, red.is_feasible(&x, 1e-9), "seed {seed} sample {k}");
            feasible += usize::from(a);
        }
        assert!(feasible > 0 && feasible < 1000);
    }
}

#[test]
fn equality_point_survives_reduction() {
    for seed in 0..5 {
        let s = spec(seed, 2);
        let inst = generate_synthetic(&s);
        let red = reduce(&inst).unwrap();
        let x0 = synthetic_interior_point(&s);
        assert!(inst.is_feasible(&x0, 1e-9));
        assert!(red.is_feasible(&x0, 1e-9));
        assert_eq!(red.m(), inst.m() + 2 * inst.m_eq() + 2 * inst.n);
    }
}

#[test]
fn radius_encloses_sampled_points() {
    for seed in 0..5 {
        let red = reduce(&generate_synthetic(&spec(seed, 0))).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let mut hits = 0;
        while hits < 1000 {
            let x = DVector::from_fn(4, |_, _| rng.random::<f64>());
            if red.is_feasible(&x, 0.0) {
                hits += 1;
                assert!(x.norm() <= red.radius + 1e-12);
            }
        }
    }
}
