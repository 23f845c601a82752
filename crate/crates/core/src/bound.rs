//! DNN relaxation bound with a floating-point safeguard.
//!
//! The relaxation is solved in its sum-of-squares form
//!
//! ```text
//! max λ   s.t.  [[Q, d], [dᵀ, −λ]] = S + GᵀTG,   S ⪰ 0,  T ≥ 0,
//! ```
//!
//! with `G = [0ᵀ 1; −A b]`. Any `(λ, S, T)` with `S ⪰ 0`, `T ≥ 0` yields the
//! valid bound `λ + min(0, λ_min(Δ))·(1 + r₀²)`, where `Δ` is the residual of
//! the identity, so approximate solver output never produces an unsafe bound.
//! The moment matrix `Y = [[X, x], [xᵀ, 1]]` comes back as the conic dual.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::conic::{self, smat, svec, svec_into, svec_len, Cone, ConicLP, ConicSettings, ConicSolution, ConicStatus, LinearMap, WarmStart};
use crate::cvxqp::{self, solve_convex_qp};
use crate::instance::ReducedInstance;
use crate::linalg::{self, max_abs};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BoundError {
    #[error("conic solver diverged; the relaxation looks infeasible or unbounded")]
    Diverged,
    #[error(transparent)]
    Conic(#[from] conic::ConicError),
    #[error(transparent)]
    Linalg(#[from] linalg::LinalgError),
}

/// `x ↦ F·x_free + svec(S) + svec(GᵀTG)` over `[free, S, T]`.
#[derive(Debug, Clone)]
pub struct SosMap {
    pub g: DMatrix<f64>,
    pub free: DMatrix<f64>,
}

impl SosMap {
    pub fn side(&self) -> usize {
        self.g.ncols()
    }

    pub fn t_side(&self) -> usize {
        self.g.nrows()
    }

    pub fn cones(&self) -> Vec<Cone> {
        vec![Cone::Free(self.free.ncols()), Cone::Psd(self.side()), Cone::Nonneg(svec_len(self.t_side()))]
    }

    /// Splits a flattened variable into `(free, S, T)`.
    pub fn split(&self, x: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>, DMatrix<f64>) {
        let k = self.free.ncols();
        let ls = svec_len(self.side());
        let free = DVector::from_column_slice(&x.as_slice()[..k]);
        let s = smat(&x.as_slice()[k..k + ls], self.side());
        let t = smat(&x.as_slice()[k + ls..], self.t_side());
        (free, s, t)
    }

    /// `GᵀTG`.
    pub fn congruence(&self, t: &DMatrix<f64>) -> DMatrix<f64> {
        let gt_t = self.g.tr_mul(t);
        let mut out = &gt_t * &self.g;
        linalg::symmetrize(&mut out);
        out
    }
}

impl LinearMap for SosMap {
    fn rows(&self) -> usize {
        svec_len(self.side())
    }

    fn cols(&self) -> usize {
        self.free.ncols() + svec_len(self.side()) + svec_len(self.t_side())
    }

    fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        let k = self.free.ncols();
        let ls = svec_len(self.side());
        let t = smat(&x.as_slice()[k + ls..], self.t_side());
        let mut out = svec(&self.congruence(&t));
        out += DVector::from_column_slice(&x.as_slice()[k..k + ls]);
        out += &self.free * DVector::from_column_slice(&x.as_slice()[..k]);
        out
    }

    fn apply_t(&self, y: &DVector<f64>) -> DVector<f64> {
        let k = self.free.ncols();
        let ls = svec_len(self.side());
        let lt = svec_len(self.t_side());
        let mut out = DVector::zeros(k + ls + lt);
        out.rows_mut(0, k).copy_from(&self.free.tr_mul(y));
        out.rows_mut(k, ls).copy_from(y);
        let ym = smat(y.as_slice(), self.side());
        let gy = &self.g * ym;
        let mut gyg = gy * self.g.transpose();
        linalg::symmetrize(&mut gyg);
        svec_into(&gyg, &mut out.as_mut_slice()[k + ls..]);
        out
    }

    fn gram(&self) -> DMatrix<f64> {
        let n1 = self.side();
        let l = svec_len(n1);
        let kk = self.g.tr_mul(&self.g);
        let mut gram = DMatrix::identity(l, l);
        let r2 = std::f64::consts::SQRT_2;
        for j in 0..n1 {
            for i in 0..=j {
                let p = conic::svec_index(i, j);
                // svec(K E_p K) where E_p is the unit element of position p.
                for lcol in 0..n1 {
                    for krow in 0..=lcol {
                        let q = conic::svec_index(krow, lcol);
                        let mut v = if i == j {
                            kk[(krow, i)] * kk[(i, lcol)]
                        } else {
                            (kk[(krow, i)] * kk[(j, lcol)] + kk[(krow, j)] * kk[(i, lcol)]) / r2
                        };
                        if krow != lcol {
                            v *= r2;
                        }
                        gram[(q, p)] += v;
                    }
                }
            }
        }
        gram += &self.free * self.free.transpose();
        gram
    }
}

/// `G = [0ᵀ 1; −A b]` with the constraint rows scaled to unit norm.
///
/// Positive row scaling leaves both the region and the relaxation unchanged.
pub fn lifted_constraints(a: &DMatrix<f64>, b: &DVector<f64>) -> DMatrix<f64> {
    let (m, n) = a.shape();
    let mut g = DMatrix::zeros(m + 1, n + 1);
    g[(0, n)] = 1.0;
    for i in 0..m {
        let norm = (a.row(i).norm_squared() + b[i] * b[i]).sqrt();
        let s = if norm > 0.0 { 1.0 / norm } else { 1.0 };
        for j in 0..n {
            g[(i + 1, j)] = -a[(i, j)] * s;
        }
        g[(i + 1, n)] = b[i] * s;
    }
    g
}

/// `[[Q, d], [dᵀ, c₀]]`.
pub fn bordered(q: &DMatrix<f64>, d: &DVector<f64>, corner: f64) -> DMatrix<f64> {
    let n = q.nrows();
    let mut c = DMatrix::zeros(n + 1, n + 1);
    c.view_mut((0, 0), (n, n)).copy_from(q);
    for i in 0..n {
        c[(i, n)] = d[i];
        c[(n, i)] = d[i];
    }
    c[(n, n)] = corner;
    c
}

#[derive(Debug, Clone)]
pub struct DnnProblem {
    pub lp: ConicLP,
    pub map: Arc<SosMap>,
    /// The data was divided by this factor before solving.
    pub scale: f64,
}

/// Assembles the relaxation in sum-of-squares form.
pub fn assemble_dnn(inst: &ReducedInstance) -> DnnProblem {
    let n = inst.n;
    let g = lifted_constraints(&inst.a, &inst.b);
    let c_mat = bordered(&inst.q, &inst.d, 0.0);
    let scale = max_abs(&c_mat).max(1e-12);
    let mut free = DMatrix::zeros(svec_len(n + 1), 1);
    free[(conic::svec_index(n, n), 0)] = 1.0;
    let map = Arc::new(SosMap { g, free });
    let cols = map.cols();
    let mut c = DVector::zeros(cols);
    c[0] = -1.0;
    let lp = ConicLP {
        c,
        a: map.clone(),
        b: svec(&(c_mat / scale)),
        cones: map.cones(),
    };
    DnnProblem { lp, map, scale }
}

#[derive(Debug, Clone)]
pub struct BoundCertificate {
    pub lambda_star: f64,
    pub s_star: DMatrix<f64>,
    pub t_star: DMatrix<f64>,
    /// Residual of the identity after projecting `S` and `T`.
    pub delta_matrix: DMatrix<f64>,
    pub delta: f64,
    pub radius: f64,
    pub safe_bound: f64,
    pub status: ConicStatus,
    pub iterations: usize,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub gap: f64,
    /// `⟨C, Y⟩` from the moment side, including the objective constant.
    pub moment_objective: f64,
}

#[derive(Debug, Clone)]
pub struct BoundResult {
    pub safe_bound: f64,
    /// Relaxation point projected into the region.
    pub z: DVector<f64>,
    pub cert: BoundCertificate,
    pub warm: WarmStart,
}

#[derive(Debug, Clone, Copy)]
pub struct BoundSettings {
    pub conic: ConicSettings,
    pub delta_act: f64,
    /// Stop as soon as the safe bound reaches this value.
    pub stop_at: Option<f64>,
    /// Give up once the solver's estimate of the relaxation value settles
    /// below this value; the returned bound is still safe.
    pub give_up_below: Option<f64>,
}

impl Default for BoundSettings {
    fn default() -> Self {
        BoundSettings {
            conic: ConicSettings::default(),
            delta_act: 1e-7,
            stop_at: None,
            give_up_below: None,
        }
    }
}

/// Projected `S₊`, `T₊`, the residual `Δ`, and the correction term.
pub type Safeguarded = (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>, f64);

/// Safe bound from any `(λ, S, T)`: projects, forms `Δ`, and corrects.
///
/// `target` is the bordered matrix the identity must reproduce, with `−λ`
/// excluded; `extra` is any additional known term on the right-hand side.
pub fn safeguard(
    target: &DMatrix<f64>,
    lambda: f64,
    s: &DMatrix<f64>,
    t: &DMatrix<f64>,
    map: &SosMap,
    extra: Option<&DMatrix<f64>>,
    radius: f64,
) -> Result<Safeguarded, linalg::LinalgError> {
    let n1 = target.nrows();
    let s_p = linalg::psd_project(s)?;
    let t_p = t.map(|v| v.max(0.0));
    let mut delta = target - &s_p - map.congruence(&t_p);
    delta[(n1 - 1, n1 - 1)] -= lambda;
    if let Some(e) = extra {
        delta -= e;
    }
    linalg::symmetrize(&mut delta);
    let dmin = linalg::lambda_min(&delta)?.min(0.0);
    Ok((s_p, t_p, delta, dmin * (1.0 + radius * radius)))
}

/// Least-squares projection onto `{Ax ≤ b}` when `z` violates a row by more
/// than `delta_act`.
pub fn project_to_region(inst: &ReducedInstance, z: &DVector<f64>, delta_act: f64) -> DVector<f64> {
    if inst.is_feasible(z, delta_act) {
        return z.clone();
    }
    let n = inst.n;
    match solve_convex_qp(&DMatrix::identity(n, n), &(-z), &inst.a, &inst.b, &[], cvxqp::DEFAULT_TOL, None) {
        Ok(r) => r.x,
        Err(_) => z.clone(),
    }
}

/// Pads a warm start from an earlier round whose region had fewer rows.
pub fn pad_warm(warm: &WarmStart, map: &SosMap) -> Option<WarmStart> {
    let cols = map.cols();
    if warm.x.len() > cols {
        return None;
    }
    let mut x = DVector::zeros(cols);
    let mut s = DVector::zeros(cols);
    x.rows_mut(0, warm.x.len()).copy_from(&warm.x);
    s.rows_mut(0, warm.s.len()).copy_from(&warm.s);
    Some(WarmStart { x, s })
}

pub fn dnn_lower_bound(
    inst: &ReducedInstance,
    settings: &BoundSettings,
    warm: Option<&WarmStart>,
) -> Result<BoundResult, BoundError> {
    let prob = assemble_dnn(inst);
    let padded = warm.and_then(|w| pad_warm(w, &prob.map));
    let chol = nalgebra::Cholesky::new(conic::LinearMap::gram(&*prob.map)).ok_or(conic::ConicError::RankDeficient)?;
    let target = bordered(&inst.q, &inst.d, 0.0);
    let monitor = |p: &conic::Progress<'_>| {
        // The estimate's error shrinks with the residuals; demand a margin
        // well above it before concluding the target is out of reach.
        let merit = p.primal_residual.max(p.dual_residual).max(p.gap);
        let estimate = -p.primal_objective.min(p.dual_objective) * prob.scale + inst.constant;
        let margin = 100.0 * merit * (1.0 + estimate.abs());
        if settings.give_up_below.is_some_and(|floor| estimate + margin < floor) {
            return true;
        }
        settings
            .stop_at
            .is_some_and(|goal| safe_value(inst, &prob, &target, p.x).is_ok_and(|(v, ..)| v >= goal))
    };
    let sol = conic::solve_monitored(&prob.lp, &chol, &settings.conic, padded.as_ref(), Some(&monitor))?;
    if sol.status == ConicStatus::InfeasibilitySuspected {
        return Err(BoundError::Diverged);
    }
    finish_bound(inst, &prob, &sol, settings)
}

type SafeParts = (f64, f64, DMatrix<f64>, DMatrix<f64>, DMatrix<f64>);

/// `(safe bound, λ, S₊, T₊, Δ)` for a flattened iterate, in the original scale.
fn safe_value(
    inst: &ReducedInstance,
    prob: &DnnProblem,
    target: &DMatrix<f64>,
    x: &DVector<f64>,
) -> Result<SafeParts, linalg::LinalgError> {
    let (free, s, t) = prob.map.split(x);
    let sc = prob.scale;
    let lambda = free[0] * sc;
    let (s_p, t_p, delta, correction) = safeguard(target, lambda, &(s * sc), &(t * sc), &prob.map, None, inst.radius)?;
    Ok((lambda + correction + inst.constant, lambda, s_p, t_p, delta))
}

fn finish_bound(
    inst: &ReducedInstance,
    prob: &DnnProblem,
    sol: &ConicSolution,
    settings: &BoundSettings,
) -> Result<BoundResult, BoundError> {
    let n = inst.n;
    let target = bordered(&inst.q, &inst.d, 0.0);
    let (safe_bound, lambda, s_p, t_p, delta_matrix) = safe_value(inst, prob, &target, &sol.x)?;

    let y = smat(sol.y.as_slice(), n + 1) * -1.0;
    let corner = y[(n, n)];
    let raw = DVector::from_iterator(n, (0..n).map(|i| y[(i, n)]));
    let raw = if corner > 0.5 { raw / corner } else { raw };
    let z = project_to_region(inst, &raw, settings.delta_act);
    let moment_objective = target.component_mul(&y).sum() + inst.constant;

    let cert = BoundCertificate {
        lambda_star: lambda + inst.constant,
        s_star: s_p,
        t_star: t_p,
        delta: linalg::lambda_min(&delta_matrix)?.min(0.0),
        delta_matrix,
        radius: inst.radius,
        safe_bound,
        status: sol.status,
        iterations: sol.iterations,
        primal_residual: sol.primal_residual,
        dual_residual: sol.dual_residual,
        gap: sol.gap,
        moment_objective,
    };
    Ok(BoundResult {
        safe_bound,
        z,
        cert,
        warm: WarmStart {
            x: sol.x.clone(),
            s: sol.s.clone(),
        },
    })
}
