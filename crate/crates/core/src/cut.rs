//! Valid cuts: the SDP construction with its safeguarded removed-region bound,
//! and the linear-programming construction in reduced coordinates.
//!
//! A cut `c` anchored at `x̄` keeps `cᵀ(x − x̄) ≥ 1`; its bound `w` is a safe
//! lower bound on `Φ` over the removed slab `F ∩ {cᵀ(x − x̄) ≤ 1}`.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::bound::{bordered, dnn_lower_bound, lifted_constraints, safeguard, BoundSettings, SosMap};
use crate::conic::{self, svec, svec_len, ConicLP, ConicStatus, LinearMap};
use crate::instance::{ReducedInstance, RowTag};
use crate::linalg::{self, max_abs, select_rows};
use crate::localsearch::KktPoint;
use crate::lp::{self, LinearProgram, LpOutcome};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CutError {
    #[error("cut generation failed: {0}")]
    Failed(String),
    #[error("LP cut not applicable: {0}")]
    NotApplicable(&'static str),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cut {
    pub c: DVector<f64>,
    pub anchor: DVector<f64>,
    /// Safe lower bound on `Φ` over the removed slab.
    pub removed_bound: f64,
}

impl Cut {
    /// The appended row `−cᵀx ≤ −cᵀx̄ − 1`.
    pub fn row(&self) -> (DVector<f64>, f64) {
        (-&self.c, -self.c.dot(&self.anchor) - 1.0)
    }

    /// `inst` with the cut appended.
    pub fn apply(&self, inst: &ReducedInstance, index: usize) -> ReducedInstance {
        let (row, rhs) = self.row();
        inst.with_row(&row, rhs, RowTag::Cut(index))
    }

    /// `F ∩ {cᵀ(x − x̄) ≤ 1}`.
    pub fn removed_region(&self, inst: &ReducedInstance) -> ReducedInstance {
        inst.with_row(&self.c, self.c.dot(&self.anchor) + 1.0, RowTag::Cut(usize::MAX))
    }
}

#[derive(Debug, Clone)]
pub struct CutCertificate {
    pub s: DMatrix<f64>,
    pub t: DMatrix<f64>,
    pub beta: f64,
    pub delta_matrix: DMatrix<f64>,
    pub delta: f64,
    pub nu_r: f64,
    /// Correction for the inexact first-order condition at `x̄` (≤ 0).
    pub kappa: f64,
    /// `ν_R + δ(1 + r₀²) + κ`, before any refinement.
    pub certificate_bound: f64,
    /// Bound from a direct relaxation solve on the removed slab, when one ran.
    pub refined_bound: Option<f64>,
    pub status: ConicStatus,
    pub iterations: usize,
}

/// Half the gap `Φ(x̄) − ν_R`, floored at `eps·1e-2 / 2`.
pub fn beta_policy(phi_xbar: f64, nu_r: f64, eps: f64) -> f64 {
    let floor = eps * 1e-2;
    let gap = phi_xbar - nu_r;
    if gap <= 0.0 {
        0.5 * floor
    } else {
        0.5 * gap.max(floor)
    }
}

/// `(Qx̄ + d; −x̄ᵀQx̄ − dᵀx̄ + β)`.
fn multiplier_column(inst: &ReducedInstance, xbar: &DVector<f64>, beta: f64) -> DVector<f64> {
    let n = inst.n;
    let grad = &inst.q * xbar + &inst.d;
    let mut g = DVector::zeros(n + 1);
    g.rows_mut(0, n).copy_from(&grad);
    g[n] = -grad.dot(xbar) + beta;
    g
}

/// `½(g hᵀ + h gᵀ)`.
fn sym_outer(g: &DVector<f64>, h: &DVector<f64>) -> DMatrix<f64> {
    (g * h.transpose() + h * g.transpose()) * 0.5
}

#[derive(Debug, Clone)]
pub struct CutProblem {
    pub lp: ConicLP,
    pub map: Arc<SosMap>,
    pub scale: f64,
    pub g: DVector<f64>,
}

/// Variables `[c, S, T]`; the identity is
/// `[[Q, d], [dᵀ, −ν_R]] = S + GᵀTG + ½(g hᵀ + h gᵀ)` with `h = (−c; 1 + cᵀx̄)`.
///
/// `nu_r` is on the scale of `Φ` including the objective constant.
pub fn assemble_cut_sdp(inst: &ReducedInstance, xbar: &DVector<f64>, zbar: &DVector<f64>, nu_r: f64, beta: f64) -> CutProblem {
    let n = inst.n;
    let g = multiplier_column(inst, xbar, beta);
    let target = bordered(&inst.q, &inst.d, -(nu_r - inst.constant));
    let mut e_last = DVector::zeros(n + 1);
    e_last[n] = 1.0;
    let rhs = &target - sym_outer(&g, &e_last);
    let scale = max_abs(&rhs).max(g.amax()).max(1e-12);

    let mut free = DMatrix::zeros(svec_len(n + 1), n);
    for j in 0..n {
        let mut p = DVector::zeros(n + 1);
        p[j] = -1.0;
        p[n] = xbar[j];
        free.set_column(j, &(svec(&sym_outer(&g, &p)) / scale));
    }
    let map = Arc::new(SosMap {
        g: lifted_constraints(&inst.a, &inst.b),
        free,
    });
    let mut c = DVector::zeros(map.cols());
    c.rows_mut(0, n).copy_from(&(zbar - xbar));
    let lp = ConicLP {
        c,
        a: map.clone(),
        b: svec(&(rhs / scale)),
        cones: map.cones(),
    };
    CutProblem { lp, map, scale, g }
}

/// `min over F of (Qx̄ + d)ᵀ(x − x̄) + β`, slightly deflated for LP round-off.
fn first_order_floor(inst: &ReducedInstance, xbar: &DVector<f64>, beta: f64) -> f64 {
    let grad = &inst.q * xbar + &inst.d;
    match lp::minimize(&grad, &inst.a, &inst.b).value() {
        Some(v) => v - grad.dot(xbar) - 1e-9 * (1.0 + grad.amax()) + beta,
        None => f64::NEG_INFINITY,
    }
}

/// Correction for an inexact first-order condition: the floor times the
/// largest value of `1 + cᵀ(x̄ − x)` over `F`.
fn first_order_correction(inst: &ReducedInstance, xbar: &DVector<f64>, c: &DVector<f64>, floor: f64) -> f64 {
    if floor >= 0.0 {
        return 0.0;
    }
    let Some(cmin) = lp::minimize(c, &inst.a, &inst.b).value() else {
        return f64::NEG_INFINITY;
    };
    let h_max = (1.0 + c.dot(xbar) - cmin).max(0.0) * (1.0 + 1e-9);
    floor * h_max
}

struct CertParts {
    c: DVector<f64>,
    s: DMatrix<f64>,
    t: DMatrix<f64>,
    delta_matrix: DMatrix<f64>,
    kappa: f64,
    bound: f64,
}

fn certificate(
    inst: &ReducedInstance,
    prob: &CutProblem,
    x: &DVector<f64>,
    xbar: &DVector<f64>,
    nu_r: f64,
    floor: f64,
) -> Result<CertParts, CutError> {
    let n = inst.n;
    let (c, s, t) = prob.map.split(x);
    if c.iter().any(|v| !v.is_finite()) {
        return Err(CutError::Failed("non-finite cut direction".into()));
    }
    let sc = prob.scale;
    let mut h = DVector::zeros(n + 1);
    h.rows_mut(0, n).copy_from(&(-&c));
    h[n] = 1.0 + c.dot(xbar);
    let rank_one = sym_outer(&prob.g, &h);
    let target = bordered(&inst.q, &inst.d, 0.0);
    let (s, t, delta_matrix, correction) = safeguard(
        &target,
        nu_r - inst.constant,
        &(s * sc),
        &(t * sc),
        &prob.map,
        Some(&rank_one),
        inst.radius,
    )
    .map_err(|e| CutError::Failed(e.to_string()))?;
    let kappa = first_order_correction(inst, xbar, &c, floor);
    Ok(CertParts {
        c,
        s,
        t,
        delta_matrix,
        kappa,
        bound: nu_r + correction + kappa,
    })
}

/// Safe bound on the removed slab, or `+∞` when the slab is empty.
fn removed_region_bound(region: &ReducedInstance, settings: &BoundSettings, stop_at: f64) -> f64 {
    if !lp::is_feasible(&region.a, &region.b) {
        return f64::INFINITY;
    }
    let s = BoundSettings {
        stop_at: Some(stop_at),
        ..*settings
    };
    dnn_lower_bound(region, &s, None).map_or(f64::NEG_INFINITY, |r| r.safe_bound)
}

/// Solves the cut SDP and returns the cut with its safeguarded bound.
///
/// `nu` is the value the removed-region bound must reach; when the
/// certificate falls short a direct relaxation bound on the slab is tried
/// and the larger of the two is kept.
pub fn dnn_cut(
    inst: &ReducedInstance,
    xbar: &DVector<f64>,
    zbar: &DVector<f64>,
    nu_r: f64,
    nu: f64,
    beta: f64,
    settings: &BoundSettings,
) -> Result<(Cut, CutCertificate), CutError> {
    let prob = assemble_cut_sdp(inst, xbar, zbar, nu_r, beta);
    let floor = first_order_floor(inst, xbar, beta);
    let chol = nalgebra::Cholesky::new(prob.map.gram()).ok_or_else(|| CutError::Failed("singular cut system".into()))?;
    let monitor = |p: &conic::Progress<'_>| certificate(inst, &prob, p.x, xbar, nu_r, floor).is_ok_and(|c| c.bound >= nu);
    let sol = conic::solve_monitored(&prob.lp, &chol, &settings.conic, None, Some(&monitor))
        .map_err(|e| CutError::Failed(e.to_string()))?;
    if sol.status == ConicStatus::InfeasibilitySuspected {
        return Err(CutError::Failed("cut SDP diverged".into()));
    }
    let CertParts {
        c,
        s: s_p,
        t: t_p,
        delta_matrix,
        kappa,
        bound: certificate_bound,
    } = certificate(inst, &prob, &sol.x, xbar, nu_r, floor)?;
    let delta = linalg::lambda_min(&delta_matrix).map_err(|e| CutError::Failed(e.to_string()))?.min(0.0);

    let cut = Cut {
        c,
        anchor: xbar.clone(),
        removed_bound: certificate_bound,
    };
    let mut refined_bound = None;
    let mut w = certificate_bound;
    if w.is_nan() || w < nu {
        let r = removed_region_bound(&cut.removed_region(inst), settings, nu);
        refined_bound = Some(r);
        w = w.max(r);
    }
    let cert = CutCertificate {
        s: s_p,
        t: t_p,
        beta,
        delta_matrix,
        delta,
        nu_r,
        kappa,
        certificate_bound,
        refined_bound,
        status: sol.status,
        iterations: sol.iterations,
    };
    if !w.is_finite() && w < 0.0 {
        return Err(CutError::Failed("no finite bound on the removed region".into()));
    }
    Ok((Cut { removed_bound: w, ..cut }, cert))
}

/// Reduced coordinates `y = b_B − A_B x` around a KKT point.
#[derive(Debug, Clone)]
pub struct ReducedCoords {
    pub k: usize,
    /// Row indices of `A_B`; the first `k` span the active normals.
    pub basis: Vec<usize>,
    pub r_mat: DMatrix<f64>,
    pub p: DVector<f64>,
    pub r: f64,
    pub f: DMatrix<f64>,
    pub w: DVector<f64>,
    pub ybar: DVector<f64>,
    pub d_mat: DMatrix<f64>,
    pub q: DVector<f64>,
    pub upsilon: f64,
    pub h: DMatrix<f64>,
    /// `A_B⁻¹`.
    pub a_inv: DMatrix<f64>,
}

/// Greedy pivoted selection: active rows first, then the rest, keeping each
/// row that raises the rank. Returns `(basis, k)`.
pub fn select_basis(inst: &ReducedInstance, active: &[usize]) -> Option<(Vec<usize>, usize)> {
    let n = inst.n;
    let mut basis: Vec<usize> = Vec::new();
    let mut k = 0;
    let try_add = |basis: &mut Vec<usize>, i: usize| {
        let mut cand = basis.clone();
        cand.push(i);
        let sub = select_rows(&inst.a, &cand);
        if linalg::rank(&sub, 1e-9).is_ok_and(|r| r == cand.len()) {
            *basis = cand;
            true
        } else {
            false
        }
    };
    for &i in active {
        if basis.len() < n && try_add(&mut basis, i) {
            k += 1;
        }
    }
    for i in 0..inst.m() {
        if basis.len() == n {
            break;
        }
        if !active.contains(&i) {
            try_add(&mut basis, i);
        }
    }
    (basis.len() == n).then_some((basis, k))
}

pub fn reduced_coords(inst: &ReducedInstance, xbar: &DVector<f64>, active: &[usize]) -> Result<ReducedCoords, CutError> {
    let n = inst.n;
    let (basis, k) = select_basis(inst, active).ok_or(CutError::NotApplicable("no rank-n basis"))?;
    let a_b = select_rows(&inst.a, &basis);
    let b_b = DVector::from_iterator(n, basis.iter().map(|&i| inst.b[i]));
    let a_inv = a_b.clone().try_inverse().ok_or(CutError::NotApplicable("singular basis"))?;
    let r_mat = {
        let mut r = a_inv.transpose() * &inst.q * &a_inv;
        linalg::symmetrize(&mut r);
        r
    };
    let x_b = &a_inv * &b_b;
    let p = -(a_inv.transpose() * &inst.d) - &r_mat * &b_b;
    let r = (&inst.q * &x_b + &inst.d * 2.0).dot(&x_b);
    let others: Vec<usize> = (0..inst.m()).filter(|i| !basis.contains(i)).collect();
    let a_n = select_rows(&inst.a, &others);
    let f = -(&a_n * &a_inv);
    let w = DVector::from_iterator(others.len(), others.iter().map(|&i| inst.b[i])) - &a_n * &x_b;
    let ybar = &b_b - &a_b * xbar;

    let (d_mat, q, upsilon, h) = if k == n {
        (r_mat.clone(), p.clone(), r, DMatrix::zeros(n + 1, n + 1))
    } else {
        let m = n - k;
        let r11 = r_mat.view((0, 0), (k, k)).into_owned();
        let r12 = r_mat.view((0, k), (k, m)).into_owned();
        let r22 = r_mat.view((k, k), (m, m)).into_owned();
        let p1 = p.rows(0, k).into_owned();
        let p2 = p.rows(k, m).into_owned();
        let chol = r22.clone().cholesky().ok_or(CutError::NotApplicable("reduced Hessian block not positive definite"))?;
        let r22_inv_r12t = chol.solve(&r12.transpose());
        let r22_inv_p2 = chol.solve(&p2);
        let mut d = DMatrix::zeros(n, n);
        let mut schur = &r11 - &r12 * &r22_inv_r12t;
        linalg::symmetrize(&mut schur);
        d.view_mut((0, 0), (k, k)).copy_from(&schur);
        let mut q = DVector::zeros(n);
        q.rows_mut(0, k).copy_from(&(&p1 - &r12 * &r22_inv_p2));
        let upsilon = r - p2.dot(&r22_inv_p2);
        // H = Lᵀ R₂₂⁻¹ L with L = [R₁₂ᵀ R₂₂ p₂].
        let mut l = DMatrix::zeros(m, n + 1);
        l.view_mut((0, 0), (m, k)).copy_from(&r12.transpose());
        l.view_mut((0, k), (m, m)).copy_from(&r22);
        l.set_column(n, &p2);
        let mut h = l.transpose() * chol.solve(&l);
        linalg::symmetrize(&mut h);
        (d, q, upsilon, h)
    };
    Ok(ReducedCoords {
        k,
        basis,
        r_mat,
        p,
        r,
        f,
        w,
        ybar,
        d_mat,
        q,
        upsilon,
        h,
        a_inv,
    })
}

/// `μᵢ* = min qᵀy + βy₀` s.t. `Dᵢᵀy + qᵢy₀ = −1`, `Fy ≤ wy₀`, `y, y₀ ≥ 0`.
fn mu_star(rc: &ReducedCoords, i: usize, beta: f64) -> LpOutcome {
    let n = rc.q.len();
    let mut c = DVector::zeros(n + 1);
    c.rows_mut(0, n).copy_from(&rc.q);
    c[n] = beta;
    let mut a_eq = DMatrix::zeros(1, n + 1);
    for j in 0..n {
        a_eq[(0, j)] = rc.d_mat[(j, i)];
    }
    a_eq[(0, n)] = rc.q[i];
    let mut a_le = DMatrix::zeros(rc.f.nrows(), n + 1);
    a_le.view_mut((0, 0), (rc.f.nrows(), n)).copy_from(&rc.f);
    a_le.set_column(n, &(-&rc.w));
    LinearProgram {
        c,
        b_le: DVector::zeros(rc.f.nrows()),
        a_le,
        a_eq,
        b_eq: DVector::from_element(1, -1.0),
        lower: vec![0.0; n + 1],
        upper: vec![f64::INFINITY; n + 1],
    }
    .solve()
}

/// Cut from `k` linear programs in reduced coordinates. The bound comes from
/// a direct relaxation solve on the removed slab.
pub fn lp_cut(inst: &ReducedInstance, kkt: &KktPoint, nu_r: f64, beta: f64, settings: &BoundSettings) -> Result<(Cut, ReducedCoords), CutError> {
    if !kkt.second_order {
        return Err(CutError::NotApplicable("second-order condition fails"));
    }
    let rc = reduced_coords(inst, &kkt.x, &kkt.active)?;
    let qmin = rc.q.rows(0, rc.k).min();
    if rc.k > 0 && qmin < -1e-8 {
        return Err(CutError::NotApplicable("negative multiplier in reduced coordinates"));
    }
    if beta <= 0.0 && rc.k > 0 && qmin <= 1e-12 {
        return Err(CutError::NotApplicable("zero multiplier with beta = 0"));
    }
    let n = inst.n;
    let mut theta = DVector::zeros(n);
    for i in 0..rc.k {
        match mu_star(&rc, i, beta) {
            LpOutcome::Optimal { value, .. } => {
                if value <= 1e-12 {
                    return Err(CutError::NotApplicable("zero LP value"));
                }
                theta[i] = 1.0 / value;
            }
            LpOutcome::Infeasible => {}
            LpOutcome::Unbounded => return Err(CutError::NotApplicable("unbounded LP")),
        }
    }
    let a_b = select_rows(&inst.a, &rc.basis);
    let c = -(a_b.transpose() * &theta);
    let mut cut = Cut {
        c,
        anchor: kkt.x.clone(),
        removed_bound: f64::NEG_INFINITY,
    };
    cut.removed_bound = removed_region_bound(&cut.removed_region(inst), settings, nu_r);
    Ok((cut, rc))
}
