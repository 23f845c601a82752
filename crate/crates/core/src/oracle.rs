//! Brute-force global minimizer for tiny instances, used only for validation.
//!
//! The global minimum of a quadratic over a bounded polytope is attained at a
//! point where `Φ` restricted to some face is stationary with positive
//! definite curvature, or at a vertex. Faces whose restricted Hessian is not
//! positive definite attain their minimum on a sub-face, so enumerating all
//! independent row subsets and keeping only the strictly convex faces is
//! complete.

use nalgebra::DVector;
use thiserror::Error;

use crate::instance::{bounding_box, ReducedInstance};
use crate::linalg::{self, max_abs, select_rows, DEFAULT_RANK_TOL};
use crate::par;

/// Maximum number of row subsets the oracle will examine.
pub const SUBSET_BUDGET: u64 = 65_536;
pub const MAX_ORACLE_DIM: usize = 4;
pub const MAX_GRID_DIM: usize = 3;

const FEAS_TOL: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("instance with n = {n}, M = {m} exceeds the enumeration budget")]
    BudgetExceeded { n: usize, m: usize },
    #[error("grid search supports n <= {MAX_GRID_DIM}, got {0}")]
    GridDimension(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleResult {
    /// `+∞` when the region is empty.
    pub value: f64,
    pub x: Option<DVector<f64>>,
    /// Number of row subsets examined.
    pub enumerated: usize,
}

fn binomial(n: u64, k: u64) -> u64 {
    (0..k).fold(1u64, |acc, i| acc.saturating_mul(n - i) / (i + 1))
}

pub fn subset_count(n: usize, m: usize) -> u64 {
    (0..=n.min(m) as u64).fold(0u64, |acc, k| acc.saturating_add(binomial(m as u64, k)))
}

/// All subsets of `0..m` with at most `max_size` elements, in lexicographic
/// order by size then members.
fn subsets(m: usize, max_size: usize) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new()];
    let mut frontier = vec![Vec::new()];
    for _ in 0..max_size.min(m) {
        let mut next = Vec::new();
        for s in &frontier {
            let start = s.last().map_or(0, |&l| l + 1);
            for i in start..m {
                let mut t = s.clone();
                t.push(i);
                next.push(t);
            }
        }
        out.extend(next.iter().cloned());
        frontier = next;
    }
    out
}

/// Stationary point of `Φ` on the affine hull of the face `A_I x = b_I`,
/// provided the face is strictly convex and the point is feasible.
fn face_candidate(inst: &ReducedInstance, rows: &[usize]) -> Option<DVector<f64>> {
    let n = inst.n;
    let a_i = select_rows(&inst.a, rows);
    let b_i = DVector::from_iterator(rows.len(), rows.iter().map(|&r| inst.b[r]));
    if !rows.is_empty() && linalg::rank(&a_i, DEFAULT_RANK_TOL).ok()? < rows.len() {
        return None;
    }
    let x_p = if rows.is_empty() {
        DVector::zeros(n)
    } else {
        let gram = &a_i * a_i.transpose();
        let w = gram.cholesky()?.solve(&b_i);
        a_i.transpose() * w
    };
    let z = linalg::nullspace_basis(&a_i, DEFAULT_RANK_TOL).ok()?;
    let x = if z.ncols() == 0 {
        x_p
    } else {
        let (h, lmin) = linalg::reduced_hessian(&inst.q, &z).ok()?;
        if lmin <= 1e-12 * (1.0 + max_abs(&inst.q)) {
            return None;
        }
        let g = z.transpose() * (&inst.q * &x_p + &inst.d);
        let t = h.cholesky()?.solve(&(-g));
        x_p + z * t
    };
    let feasible = (0..inst.m()).all(|i| inst.a.row(i).dot(&x.transpose()) - inst.b[i] <= FEAS_TOL * (1.0 + inst.b[i].abs()));
    feasible.then_some(x)
}

/// Exact global minimum by face enumeration (`n ≤ 4`, bounded subset count).
pub fn global_qp_oracle(inst: &ReducedInstance) -> Result<OracleResult, OracleError> {
    let (n, m) = (inst.n, inst.m());
    if n > MAX_ORACLE_DIM || subset_count(n, m) > SUBSET_BUDGET {
        return Err(OracleError::BudgetExceeded { n, m });
    }
    let all = subsets(m, n);
    let candidates = par::par_map(&all, |rows| {
        face_candidate(inst, rows).map(|x| (inst.objective(&x), x))
    });
    let mut best: Option<(f64, DVector<f64>)> = None;
    for (value, x) in candidates.into_iter().flatten() {
        if best.as_ref().is_none_or(|(v, _)| value < *v) {
            best = Some((value, x));
        }
    }
    Ok(match best {
        Some((value, x)) => OracleResult {
            value,
            x: Some(x),
            enumerated: all.len(),
        },
        None => OracleResult {
            value: f64::INFINITY,
            x: None,
            enumerated: all.len(),
        },
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridResult {
    /// `+∞` when no grid point is feasible.
    pub value: f64,
    pub feasible_points: usize,
}

/// Minimum of `Φ` over feasible points of a uniform grid on the bounding box.
pub fn grid_min(inst: &ReducedInstance, points_per_axis: usize) -> Result<GridResult, OracleError> {
    let n = inst.n;
    if n > MAX_GRID_DIM {
        return Err(OracleError::GridDimension(n));
    }
    let empty = GridResult {
        value: f64::INFINITY,
        feasible_points: 0,
    };
    let Ok((lo, hi)) = bounding_box(&inst.a, &inst.b) else {
        return Ok(empty);
    };
    let k = points_per_axis.max(1);
    let coord = |j: usize, i: usize| {
        if k == 1 {
            0.5 * (lo[j] + hi[j])
        } else {
            let t = i as f64 / (k - 1) as f64;
            (1.0 - t) * lo[j] + t * hi[j]
        }
    };
    let outer: Vec<usize> = (0..k).collect();
    let inner = k.pow(n.saturating_sub(1) as u32);
    let rows = par::par_map(&outer, |&i0| {
        let mut best = f64::INFINITY;
        let mut count = 0usize;
        let mut x = DVector::zeros(n);
        for rest in 0..inner {
            x[0] = coord(0, i0);
            let mut r = rest;
            for j in 1..n {
                x[j] = coord(j, r % k);
                r /= k;
            }
            let ok = (0..inst.m())
                .all(|i| inst.a.row(i).dot(&x.transpose()) <= inst.b[i] + 1e-12 * (1.0 + inst.b[i].abs()));
            if ok {
                count += 1;
                best = best.min(inst.objective(&x));
            }
        }
        (best, count)
    });
    Ok(rows.into_iter().fold(empty, |acc, (v, c)| GridResult {
        value: acc.value.min(v),
        feasible_points: acc.feasible_points + c,
    }))
}
