//! Local search to a certified second-order KKT point.
//!
//! Alternates generalized mountain-climbing steps on the DC split
//! `Q = M − N`, exact minimization over the current active face, and
//! facet-descent escapes along negative curvature directions.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::cvxqp::{self, solve_convex_qp, CvxQpError};
use crate::instance::ReducedInstance;
use crate::linalg::{self, max_abs_vec, select_rows, DEFAULT_RANK_TOL};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerances {
    pub delta_act: f64,
    pub delta_pd: f64,
    /// Objective comparisons use `delta_obj · (1 + |Φ|)`.
    pub delta_obj: f64,
    /// `None` means `100·(M+1)`.
    pub max_outer: Option<usize>,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            delta_act: 1e-7,
            delta_pd: 1e-8,
            delta_obj: 1e-9,
            max_outer: None,
        }
    }
}

impl Tolerances {
    fn obj_slack(&self, phi: f64) -> f64 {
        self.delta_obj * (1.0 + phi.abs())
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SearchError {
    #[error("no constraint blocks the descent direction; the region is not bounded")]
    NoBlockingRow,
    #[error("subproblem failed: {0}")]
    Subproblem(#[from] CvxQpError),
    #[error(transparent)]
    Linalg(#[from] linalg::LinalgError),
}

#[derive(Debug, Clone)]
pub struct DcSplit {
    pub m: DMatrix<f64>,
    pub n: DMatrix<f64>,
}

#[derive(Debug, Clone)]
pub struct KktPoint {
    pub x: DVector<f64>,
    pub active: Vec<usize>,
    /// Length `M`; zero off the active set.
    pub multipliers: DVector<f64>,
    /// `‖Qx + d + Aᵀλ‖_∞`.
    pub kkt_residual: f64,
    /// `+∞` when the active rows pin a vertex.
    pub reduced_lambda_min: f64,
    pub second_order: bool,
    pub certified: bool,
    pub objective: f64,
    pub iterations: usize,
    /// `Φ` at every iterate visited, in order.
    pub trace: Vec<f64>,
}

/// Rows with `|aᵢᵀx − bᵢ| ≤ δ·(1+|bᵢ|)`.
pub fn active_set(x: &DVector<f64>, a: &DMatrix<f64>, b: &DVector<f64>, delta: f64) -> Vec<usize> {
    (0..a.nrows())
        .filter(|&i| (a.row(i).dot(&x.transpose()) - b[i]).abs() <= delta * (1.0 + b[i].abs()))
        .collect()
}

pub fn dc_split(q: &DMatrix<f64>) -> Result<DcSplit, linalg::LinalgError> {
    let eig = linalg::sym_eig(q)?;
    Ok(DcSplit {
        m: eig.recompose(|l| l.max(0.0)),
        n: eig.recompose(|l| (-l).max(0.0)),
    })
}

/// `λ_min` of `Q` on the null space of the given rows.
pub fn reduced_lambda_min(inst: &ReducedInstance, rows: &[usize]) -> Result<f64, linalg::LinalgError> {
    let z = linalg::nullspace_basis(&select_rows(&inst.a, rows), DEFAULT_RANK_TOL)?;
    Ok(linalg::reduced_hessian(&inst.q, &z)?.1)
}

/// Minimizer over `F` of the convex majorant `Ψ(·, x̃)`.
pub fn gmc_step(inst: &ReducedInstance, split: &DcSplit, xt: &DVector<f64>) -> Result<DVector<f64>, SearchError> {
    let h = &split.m * 2.0;
    let g = &inst.d * 2.0 - (&split.n * xt) * 2.0;
    let r = solve_convex_qp(&h, &g, &inst.a, &inst.b, &[], cvxqp::DEFAULT_TOL, Some(xt))?;
    Ok(r.x)
}

/// Minimizes `Φ` over `F` with the rows in `pinned` held at equality.
///
/// Returns the point and multipliers scaled to `Qx + d + Aᵀλ = 0`.
pub fn restricted_qp_min(
    inst: &ReducedInstance,
    xh: &DVector<f64>,
    pinned: &[usize],
) -> Result<(DVector<f64>, DVector<f64>), SearchError> {
    let h = &inst.q * 2.0;
    let g = &inst.d * 2.0;
    let r = solve_convex_qp(&h, &g, &inst.a, &inst.b, pinned, cvxqp::DEFAULT_TOL, Some(xh))?;
    Ok((r.x, r.multipliers * 0.5))
}

/// Moves from `x̂` along a negative-curvature direction of the active face
/// until a new row becomes active.
pub fn facet_descent(inst: &ReducedInstance, xh: &DVector<f64>, tols: &Tolerances) -> Result<DVector<f64>, SearchError> {
    let active = active_set(xh, &inst.a, &inst.b, tols.delta_act);
    let z = linalg::nullspace_basis(&select_rows(&inst.a, &active), DEFAULT_RANK_TOL)?;
    if z.ncols() == 0 {
        return Ok(xh.clone());
    }
    let (hz, _) = linalg::reduced_hessian(&inst.q, &z)?;
    let eig = linalg::sym_eig(&hz)?;
    let mut h = &z * eig.vectors.column(0);
    let grad = &inst.q * xh + &inst.d;
    if grad.dot(&h) > 0.0 {
        h = -h;
    }
    step_to_boundary(inst, xh, &h, &active)
}

fn step_to_boundary(
    inst: &ReducedInstance,
    x: &DVector<f64>,
    h: &DVector<f64>,
    skip: &[usize],
) -> Result<DVector<f64>, SearchError> {
    let scale = 1e-12 * (1.0 + max_abs_vec(h));
    let mut alpha = f64::INFINITY;
    for i in 0..inst.m() {
        if skip.contains(&i) {
            continue;
        }
        let ah = inst.a.row(i).dot(&h.transpose());
        if ah <= scale {
            continue;
        }
        let t = (inst.b[i] - inst.a.row(i).dot(&x.transpose())).max(0.0) / ah;
        // Strict comparison keeps the smallest index on ties.
        if t < alpha {
            alpha = t;
        }
    }
    if !alpha.is_finite() {
        return Err(SearchError::NoBlockingRow);
    }
    Ok(x + h * alpha)
}

/// Nonnegative least-squares multipliers for the rows in `active`.
fn nnls_multipliers(inst: &ReducedInstance, x: &DVector<f64>, active: &[usize]) -> DVector<f64> {
    let mut lam = DVector::zeros(inst.m());
    if active.is_empty() {
        return lam;
    }
    let aa = select_rows(&inst.a, active);
    let r = &inst.q * x + &inst.d;
    let k = active.len();
    let h = &aa * aa.transpose();
    let g = &aa * r;
    let neg = -DMatrix::<f64>::identity(k, k);
    let zero = DVector::zeros(k);
    if let Ok(sol) = solve_convex_qp(&h, &g, &neg, &zero, &[], 1e-12, Some(&zero)) {
        for (j, &i) in active.iter().enumerate() {
            lam[i] = sol.x[j].max(0.0);
        }
    }
    lam
}

fn stationarity(inst: &ReducedInstance, x: &DVector<f64>, lam: &DVector<f64>) -> f64 {
    max_abs_vec(&(&inst.q * x + &inst.d + inst.a.transpose() * lam))
}

/// Stationarity bound used for certification.
pub fn kkt_tolerance(inst: &ReducedInstance) -> f64 {
    1e-6 * (1.0 + max_abs_vec(&inst.d))
}

/// Assembles and independently re-verifies the certificate at `x`.
pub fn certify(
    inst: &ReducedInstance,
    x: &DVector<f64>,
    face_multipliers: Option<&DVector<f64>>,
    tols: &Tolerances,
) -> Result<KktPoint, SearchError> {
    let active = active_set(x, &inst.a, &inst.b, tols.delta_act);
    let mut lam = DVector::zeros(inst.m());
    let mut usable = false;
    if let Some(mu) = face_multipliers {
        let on_active = (0..inst.m()).all(|i| mu[i] == 0.0 || active.contains(&i));
        if on_active && mu.iter().all(|&v| v >= -1e-9) {
            lam = mu.map(|v| v.max(0.0));
            usable = stationarity(inst, x, &lam) <= kkt_tolerance(inst);
        }
    }
    if !usable {
        let alt = nnls_multipliers(inst, x, &active);
        if face_multipliers.is_none() || stationarity(inst, x, &alt) < stationarity(inst, x, &lam) {
            lam = alt;
        }
    }
    let kkt_residual = stationarity(inst, x, &lam);
    let reduced = reduced_lambda_min(inst, &active)?;
    let second_order = reduced > -tols.delta_pd;
    let feasible = inst.is_feasible(x, tols.delta_act);
    let certified = second_order && feasible && kkt_residual <= kkt_tolerance(inst) && lam.iter().all(|&v| v >= -1e-9);
    Ok(KktPoint {
        objective: inst.objective(x),
        x: x.clone(),
        active,
        multipliers: lam,
        kkt_residual,
        reduced_lambda_min: reduced,
        second_order,
        certified,
        iterations: 0,
        trace: Vec::new(),
    })
}

/// Finite-terminating GMC from a feasible start.
pub fn finite_gmc(inst: &ReducedInstance, x0: &DVector<f64>, tols: &Tolerances) -> Result<KktPoint, SearchError> {
    let split = dc_split(&inst.q)?;
    let max_outer = tols.max_outer.unwrap_or(100 * (inst.m() + 1));
    let mut x = x0.clone();
    let mut phi = inst.objective(&x);
    let mut trace = vec![phi];
    let mut best = (phi, x.clone());

    let uncertified = |best: (f64, DVector<f64>), trace: Vec<f64>, iters: usize| -> Result<KktPoint, SearchError> {
        let mut k = certify(inst, &best.1, None, tols)?;
        k.certified = false;
        k.iterations = iters;
        k.trace = trace;
        Ok(k)
    };

    for iter in 1..=max_outer {
        let active = active_set(&x, &inst.a, &inst.b, tols.delta_act);
        let lmin = reduced_lambda_min(inst, &active)?;
        if lmin > -tols.delta_pd {
            let (xt, mu) = match restricted_qp_min(inst, &x, &active) {
                Ok((xt, mu)) if inst.objective(&xt) <= phi + tols.obj_slack(phi) => (xt, Some(mu)),
                Ok(_) | Err(SearchError::Subproblem(_)) => (x.clone(), None),
                Err(e) => return Err(e),
            };
            let phi_t = inst.objective(&xt);
            trace.push(phi_t);
            let xb = match gmc_step(inst, &split, &xt) {
                Ok(xb) => xb,
                Err(SearchError::Subproblem(_)) => return uncertified((phi_t, xt), trace, iter),
                Err(e) => return Err(e),
            };
            let phi_b = inst.objective(&xb);
            if phi_b >= phi_t - tols.obj_slack(phi_t) {
                let mut k = certify(inst, &xt, mu.as_ref(), tols)?;
                k.iterations = iter;
                k.trace = trace;
                return Ok(k);
            }
            trace.push(phi_b);
            x = xb;
            phi = phi_b;
        } else {
            let xn = facet_descent(inst, &x, tols)?;
            phi = inst.objective(&xn);
            trace.push(phi);
            x = xn;
        }
        if phi < best.0 {
            best = (phi, x.clone());
        }
    }
    uncertified(best, trace, max_outer)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn triangle() -> ReducedInstance {
        ReducedInstance::from_rows(
            "triangle",
            DMatrix::from_row_slice(2, 2, &[0.0, 0.5, 0.5, 1.0]),
            DVector::from_vec(vec![-0.25, -0.5]),
            0.25,
            DMatrix::from_row_slice(3, 2, &[-1.0, 0.0, 0.0, -1.0, 1.0, 1.0]),
            DVector::from_vec(vec![0.0, 0.0, 1.0]),
        )
        .unwrap()
    }

    fn concave_square() -> ReducedInstance {
        ReducedInstance::from_rows(
            "sq",
            -DMatrix::<f64>::identity(2, 2),
            DVector::zeros(2),
            0.0,
            DMatrix::from_row_slice(4, 2, &[1.0, 0.0, 0.0, 1.0, -1.0, 0.0, 0.0, -1.0]),
            DVector::from_vec(vec![1.0, 1.0, 0.0, 0.0]),
        )
        .unwrap()
    }

    fn concave_interval() -> ReducedInstance {
        ReducedInstance::from_rows(
            "line",
            DMatrix::from_element(1, 1, -1.0),
            DVector::zeros(1),
            0.0,
            DMatrix::from_row_slice(2, 1, &[1.0, -1.0]),
            DVector::from_vec(vec![1.0, 0.0]),
        )
        .unwrap()
    }

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_vec(xs.to_vec())
    }

    #[test]
    fn active_sets() {
        let r = triangle();
        assert_eq!(active_set(&v(&[0.0, 0.5]), &r.a, &r.b, 1e-7), vec![0]);
        let s = concave_square();
        assert_eq!(active_set(&v(&[1.0, 0.0]), &s.a, &s.b, 1e-7), vec![0, 3]);
        assert!(active_set(&v(&[0.5, 0.5]), &s.a, &s.b, 1e-7).is_empty());
    }

    #[test]
    fn dc_split_cases() {
        let s = dc_split(&-DMatrix::<f64>::identity(2, 2)).unwrap();
        assert!(s.m.amax() < 1e-14);
        assert!((s.n - DMatrix::<f64>::identity(2, 2)).amax() < 1e-14);
        let s = dc_split(&DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, -3.0])).unwrap();
        assert!((s.m - DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 0.0])).amax() < 1e-14);
        assert!((s.n - DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, 3.0])).amax() < 1e-14);
        let s = dc_split(&DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0])).unwrap();
        assert!(s.n.amax() < 1e-14);
    }

    #[test]
    fn gmc_step_climbs_to_vertex() {
        let inst = concave_interval();
        let split = dc_split(&inst.q).unwrap();
        let xb = gmc_step(&inst, &split, &v(&[0.3])).unwrap();
        assert_abs_diff_eq!(xb[0], 1.0, epsilon = 1e-12);
        let again = gmc_step(&inst, &split, &xb).unwrap();
        assert_abs_diff_eq!(again[0], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn gmc_step_descends_on_triangle() {
        let inst = triangle();
        let split = dc_split(&inst.q).unwrap();
        let xb = gmc_step(&inst, &split, &v(&[0.0, 0.5])).unwrap();
        assert!(inst.objective(&xb) <= 1e-12);
    }

    #[test]
    fn restricted_min_on_edge() {
        let inst = triangle();
        let (xt, _) = restricted_qp_min(&inst, &v(&[0.0, 0.5]), &[0]).unwrap();
        assert_abs_diff_eq!(xt[0], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(xt[1], 0.5, epsilon = 1e-12);
    }

    #[test]
    fn restricted_min_at_vertex_is_fixed() {
        let inst = concave_square();
        let (xt, _) = restricted_qp_min(&inst, &v(&[1.0, 0.0]), &[0, 3]).unwrap();
        assert_abs_diff_eq!((xt - v(&[1.0, 0.0])).amax(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn facet_descent_square() {
        let inst = concave_square();
        let xb = facet_descent(&inst, &v(&[0.5, 0.5]), &Tolerances::default()).unwrap();
        assert_abs_diff_eq!(inst.objective(&xb), -1.25, epsilon = 1e-12);
        assert!(xb.iter().any(|&c| (c - 1.0).abs() < 1e-12 || c.abs() < 1e-12));
    }

    #[test]
    fn facet_descent_interval() {
        let inst = concave_interval();
        let xb = facet_descent(&inst, &v(&[0.25]), &Tolerances::default()).unwrap();
        assert_abs_diff_eq!(xb[0], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn facet_descent_flips_uphill_direction() {
        // Φ = −x² + x; at x̂ = 0.4 the slope is positive, so h must point to 0.
        let mut inst = concave_interval();
        inst.d = v(&[0.5]);
        let xb = facet_descent(&inst, &v(&[0.4]), &Tolerances::default()).unwrap();
        assert_abs_diff_eq!(xb[0], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn finite_gmc_interval() {
        let inst = concave_interval();
        let k = finite_gmc(&inst, &v(&[0.3]), &Tolerances::default()).unwrap();
        assert!(k.certified);
        assert_abs_diff_eq!(k.x[0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(k.objective, -1.0, epsilon = 1e-12);
        assert_eq!(k.reduced_lambda_min, f64::INFINITY);
    }

    #[test]
    fn finite_gmc_triangle() {
        let inst = triangle();
        let k = finite_gmc(&inst, &v(&[0.0, 0.5]), &Tolerances::default()).unwrap();
        assert!(k.certified && k.second_order);
        assert!(k.objective <= 1e-12);
        assert!(k.kkt_residual <= 1e-6);
    }

    #[test]
    fn finite_gmc_certified_vertex_returns_immediately() {
        let inst = concave_square();
        let k = finite_gmc(&inst, &v(&[1.0, 1.0]), &Tolerances::default()).unwrap();
        assert!(k.certified);
        assert_eq!(k.iterations, 1);
        assert_abs_diff_eq!(k.objective, -2.0, epsilon = 1e-12);
    }
}
