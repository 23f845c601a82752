//! Primal active-set solver for `min ½xᵀHx + gᵀx` over `{aᵢᵀx ≤ bᵢ}` with
//! some rows pinned to equality.
//!
//! `H` only needs to be positive semidefinite on the null space of the pinned
//! rows. Singular reduced Hessians are handled with minimum-norm Newton steps
//! and zero-curvature rays, which the bounded feasible set always blocks.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::linalg::{self, max_abs_vec, select_rows, DEFAULT_RANK_TOL};
use crate::lp::{LinearProgram, LpOutcome};

pub const DEFAULT_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CvxQpError {
    #[error("constraints are infeasible")]
    Infeasible,
    #[error("objective is unbounded below on the feasible set")]
    Unbounded,
    #[error("reduced Hessian has eigenvalue {0:e} on the working face")]
    Nonconvex(f64),
    #[error("active-set iteration limit reached")]
    IterationLimit,
    #[error(transparent)]
    Linalg(#[from] linalg::LinalgError),
}

#[derive(Debug, Clone)]
pub struct CvxQpResult {
    pub x: DVector<f64>,
    /// One per row; `Hx + g + Aᵀμ = 0`.
    pub multipliers: DVector<f64>,
    pub objective: f64,
    pub kkt_residual: f64,
    /// Final working set (pinned rows first, then in order of entry).
    pub working: Vec<usize>,
    pub iterations: usize,
}

fn row_tol(tol: f64, b: f64) -> f64 {
    tol * (1.0 + b.abs())
}

/// Least-squares correction of `x` onto `{A_W x = b_W}`.
fn snap(x: &mut DVector<f64>, a: &DMatrix<f64>, b: &DVector<f64>, working: &[usize]) {
    if working.is_empty() {
        return;
    }
    let aw = select_rows(a, working);
    let r = DVector::from_iterator(working.len(), working.iter().map(|&i| b[i])) - &aw * &*x;
    if let Some(ch) = (&aw * aw.transpose()).cholesky() {
        *x += aw.transpose() * ch.solve(&r);
    }
}

/// Whether row `i` is independent of the rows already in `working`.
fn independent(a: &DMatrix<f64>, working: &[usize], i: usize) -> bool {
    let mut rows = working.to_vec();
    rows.push(i);
    let sub = select_rows(a, &rows);
    linalg::rank(&sub, DEFAULT_RANK_TOL).map(|r| r == rows.len()).unwrap_or(false)
}

fn phase_one(a: &DMatrix<f64>, b: &DVector<f64>, pinned: &[usize]) -> Result<DVector<f64>, CvxQpError> {
    let n = a.ncols();
    let free: Vec<usize> = (0..a.nrows()).filter(|i| !pinned.contains(i)).collect();
    let lp = LinearProgram {
        c: DVector::zeros(n),
        a_le: select_rows(a, &free),
        b_le: DVector::from_iterator(free.len(), free.iter().map(|&i| b[i])),
        a_eq: select_rows(a, pinned),
        b_eq: DVector::from_iterator(pinned.len(), pinned.iter().map(|&i| b[i])),
        lower: vec![f64::NEG_INFINITY; n],
        upper: vec![f64::INFINITY; n],
    };
    match lp.solve() {
        LpOutcome::Optimal { x, .. } => Ok(x),
        _ => Err(CvxQpError::Infeasible),
    }
}

/// Solves the QP, starting from `warm` when it is feasible.
pub fn solve_convex_qp(
    h: &DMatrix<f64>,
    g: &DVector<f64>,
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    pinned: &[usize],
    tol: f64,
    warm: Option<&DVector<f64>>,
) -> Result<CvxQpResult, CvxQpError> {
    let (m, n) = a.shape();
    let feasible = |x: &DVector<f64>| {
        (0..m).all(|i| {
            let r = a.row(i).dot(&x.transpose()) - b[i];
            if pinned.contains(&i) {
                r.abs() <= 1e3 * row_tol(tol, b[i])
            } else {
                r <= 1e3 * row_tol(tol, b[i])
            }
        })
    };
    let mut x = match warm {
        Some(w) if w.len() == n && feasible(w) => w.clone(),
        _ => phase_one(a, b, pinned)?,
    };

    let mut working: Vec<usize> = Vec::new();
    for &i in pinned {
        if independent(a, &working, i) {
            working.push(i);
        } else {
            let consistent = {
                let mut y = x.clone();
                snap(&mut y, a, b, &working);
                (a.row(i).dot(&y.transpose()) - b[i]).abs() <= 1e3 * row_tol(tol, b[i])
            };
            if !consistent {
                return Err(CvxQpError::Infeasible);
            }
        }
    }
    for i in 0..m {
        if pinned.contains(&i) || working.contains(&i) {
            continue;
        }
        let r = a.row(i).dot(&x.transpose()) - b[i];
        if r >= -row_tol(tol, b[i]) && independent(a, &working, i) {
            working.push(i);
        }
    }
    snap(&mut x, a, b, &working);

    let h_scale = 1.0 + h.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()));
    let max_iter = 50 * (m + n) + 100;
    for iter in 0..max_iter {
        let grad = h * &x + g;
        let aw = select_rows(a, &working);
        let z = linalg::nullspace_basis(&aw, DEFAULT_RANK_TOL)?;

        let mut step: Option<(DVector<f64>, bool)> = None;
        if z.ncols() > 0 {
            let gz = z.transpose() * &grad;
            let (hz, _) = linalg::reduced_hessian(h, &z)?;
            let eig = linalg::sym_eig(&hz)?;
            let lmin = eig.min_value();
            if lmin < -1e-8 * h_scale {
                return Err(CvxQpError::Nonconvex(lmin));
            }
            let thr = 1e-10 * h_scale;
            let mut newton = DVector::zeros(z.ncols());
            let mut ray = DVector::zeros(z.ncols());
            for j in 0..z.ncols() {
                let v = eig.vectors.column(j);
                let c = v.dot(&gz);
                if eig.values[j] > thr {
                    newton -= v * (c / eig.values[j]);
                } else {
                    ray -= v * c;
                }
            }
            let gscale = 1.0 + max_abs_vec(&grad);
            if max_abs_vec(&ray) > tol * gscale {
                step = Some((&z * ray, true));
            } else {
                let p = &z * newton;
                if max_abs_vec(&p) > 1e-11 * (1.0 + max_abs_vec(&x)) {
                    step = Some((p, false));
                }
            }
        }

        match step {
            Some((p, is_ray)) => {
                let mut alpha = if is_ray { f64::INFINITY } else { 1.0 };
                let mut blocking = None;
                for i in 0..m {
                    if working.contains(&i) {
                        continue;
                    }
                    let ap = a.row(i).dot(&p.transpose());
                    if ap <= 1e-14 * (1.0 + max_abs_vec(&p)) {
                        continue;
                    }
                    let slack = (b[i] - a.row(i).dot(&x.transpose())).max(0.0);
                    let t = slack / ap;
                    if t < alpha {
                        alpha = t;
                        blocking = Some(i);
                    }
                }
                if !alpha.is_finite() {
                    return Err(CvxQpError::Unbounded);
                }
                x += &p * alpha;
                if let Some(i) = blocking {
                    working.push(i);
                    snap(&mut x, a, b, &working);
                }
            }
            None => {
                let mu_w = working_multipliers(&aw, &grad);
                let gscale = 1.0 + max_abs_vec(&grad);
                let mut drop: Option<(usize, f64)> = None;
                for (k, &i) in working.iter().enumerate() {
                    if pinned.contains(&i) {
                        continue;
                    }
                    if mu_w[k] < -tol * gscale && drop.is_none_or(|(_, v)| mu_w[k] < v) {
                        drop = Some((k, mu_w[k]));
                    }
                }
                match drop {
                    Some((k, _)) => {
                        working.remove(k);
                    }
                    None => {
                        return Ok(finish(h, g, a, b, pinned, x, &working, &mu_w, iter + 1));
                    }
                }
            }
        }
    }
    Err(CvxQpError::IterationLimit)
}

/// `μ_W` solving `A_Wᵀμ = −∇` in the least-squares sense.
fn working_multipliers(aw: &DMatrix<f64>, grad: &DVector<f64>) -> DVector<f64> {
    if aw.nrows() == 0 {
        return DVector::zeros(0);
    }
    let gram = aw * aw.transpose();
    match gram.cholesky() {
        Some(ch) => ch.solve(&(-(aw * grad))),
        None => DVector::zeros(aw.nrows()),
    }
}

#[allow(clippy::too_many_arguments)]
fn finish(
    h: &DMatrix<f64>,
    g: &DVector<f64>,
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    pinned: &[usize],
    x: DVector<f64>,
    working: &[usize],
    mu_w: &DVector<f64>,
    iterations: usize,
) -> CvxQpResult {
    let m = a.nrows();
    let mut mu = DVector::zeros(m);
    for (k, &i) in working.iter().enumerate() {
        mu[i] = if pinned.contains(&i) { mu_w[k] } else { mu_w[k].max(0.0) };
    }
    let grad = h * &x + g;
    let stat = max_abs_vec(&(&grad + a.transpose() * &mu));
    let mut resid = stat;
    for i in 0..m {
        let r = a.row(i).dot(&x.transpose()) - b[i];
        let viol = if pinned.contains(&i) { r.abs() } else { r.max(0.0) };
        resid = resid.max(viol).max((mu[i] * r).abs());
    }
    let objective = 0.5 * (h * &x).dot(&x) + g.dot(&x);
    CvxQpResult {
        x,
        multipliers: mu,
        objective,
        kkt_residual: resid,
        working: working.to_vec(),
        iterations,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn interval() -> (DMatrix<f64>, DVector<f64>) {
        (DMatrix::from_row_slice(2, 1, &[1.0, -1.0]), DVector::from_vec(vec![1.0, 0.0]))
    }

    #[test]
    fn interior_optimum() {
        let (a, b) = interval();
        let r = solve_convex_qp(&DMatrix::from_element(1, 1, 1.0), &DVector::from_vec(vec![-0.5]), &a, &b, &[], DEFAULT_TOL, None).unwrap();
        assert_abs_diff_eq!(r.x[0], 0.5, epsilon = 1e-12);
        assert_eq!(r.multipliers.as_slice(), &[0.0, 0.0]);
    }

    #[test]
    fn pinned_row_multiplier() {
        let (a, b) = interval();
        let r = solve_convex_qp(&DMatrix::from_element(1, 1, 1.0), &DVector::from_vec(vec![-0.5]), &a, &b, &[0], DEFAULT_TOL, None).unwrap();
        assert_abs_diff_eq!(r.x[0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(r.multipliers[0], -0.5, epsilon = 1e-12);
    }

    #[test]
    fn linear_objective_moves_to_bound() {
        let (a, b) = interval();
        let warm = DVector::from_vec(vec![0.3]);
        let r = solve_convex_qp(&DMatrix::zeros(1, 1), &DVector::from_vec(vec![-0.3]), &a, &b, &[], DEFAULT_TOL, Some(&warm)).unwrap();
        assert_abs_diff_eq!(r.x[0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(r.multipliers[0], 0.3, epsilon = 1e-12);
    }

    #[test]
    fn infeasible_pins() {
        let a = DMatrix::from_row_slice(3, 1, &[1.0, -1.0, 1.0]);
        let b = DVector::from_vec(vec![1.0, 0.0, 0.5]);
        let err = solve_convex_qp(&DMatrix::zeros(1, 1), &DVector::zeros(1), &a, &b, &[0, 2], DEFAULT_TOL, None);
        assert_eq!(err.unwrap_err(), CvxQpError::Infeasible);
    }

    #[test]
    fn degenerate_vertex_terminates() {
        // Three rows meet at the origin of the square; minimize x1 + x2.
        let a = DMatrix::from_row_slice(5, 2, &[1.0, 0.0, 0.0, 1.0, -1.0, 0.0, 0.0, -1.0, -1.0, -1.0]);
        let b = DVector::from_vec(vec![1.0, 1.0, 0.0, 0.0, 0.0]);
        let warm = DVector::from_vec(vec![0.7, 0.2]);
        let r = solve_convex_qp(&DMatrix::zeros(2, 2), &DVector::from_vec(vec![1.0, 1.0]), &a, &b, &[], DEFAULT_TOL, Some(&warm)).unwrap();
        assert!(r.x.amax() <= 1e-12);
        assert!(r.kkt_residual <= 1e-9);
    }
}
