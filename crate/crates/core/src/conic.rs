//! Operator-splitting solver for conic LPs over products of free,
//! nonnegative and PSD cones.
//!
//! Solves `min cᵀx  s.t.  Ax = b,  x ∈ K` together with its dual
//! `max bᵀy  s.t.  c − Aᵀy = s ∈ K*`. Each iteration projects onto the affine
//! set through a cached Cholesky factor of `AAᵀ` and then onto `K`.
//! Symmetric blocks use the packed scaled layout of [`svec`].

use std::sync::Arc;
use std::time::Instant;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use thiserror::Error;

use crate::linalg::{self, max_abs_vec};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConicError {
    #[error("cone layout covers {layout} variables but the problem has {cols}")]
    Layout { layout: usize, cols: usize },
    #[error("constraint rows are linearly dependent")]
    RankDeficient,
    #[error("block index {0} out of range")]
    BlockIndex(usize),
    #[error(transparent)]
    Linalg(#[from] linalg::LinalgError),
}

/// Number of packed entries of a symmetric matrix with the given side.
pub fn svec_len(side: usize) -> usize {
    side * (side + 1) / 2
}

/// Packed position of entry `(i, j)`, `i ≤ j`, column-wise upper triangle.
#[inline]
pub fn svec_index(i: usize, j: usize) -> usize {
    let (i, j) = if i <= j { (i, j) } else { (j, i) };
    j * (j + 1) / 2 + i
}

/// Packs a symmetric matrix, scaling off-diagonals by `√2` so that
/// `svec(X)ᵀsvec(Y) = ⟨X, Y⟩`.
pub fn svec(x: &DMatrix<f64>) -> DVector<f64> {
    let n = x.nrows();
    let mut out = DVector::zeros(svec_len(n));
    svec_into(x, out.as_mut_slice());
    out
}

pub fn svec_into(x: &DMatrix<f64>, out: &mut [f64]) {
    let n = x.nrows();
    let mut k = 0;
    for j in 0..n {
        for i in 0..=j {
            out[k] = if i == j { x[(i, j)] } else { std::f64::consts::SQRT_2 * 0.5 * (x[(i, j)] + x[(j, i)]) };
            k += 1;
        }
    }
}

/// Inverse of [`svec`].
pub fn smat(v: &[f64], side: usize) -> DMatrix<f64> {
    let mut x = DMatrix::zeros(side, side);
    let mut k = 0;
    for j in 0..side {
        for i in 0..=j {
            if i == j {
                x[(i, i)] = v[k];
            } else {
                let e = v[k] * std::f64::consts::FRAC_1_SQRT_2;
                x[(i, j)] = e;
                x[(j, i)] = e;
            }
            k += 1;
        }
    }
    x
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Cone {
    Free(usize),
    Nonneg(usize),
    /// Packed PSD block of the given side.
    Psd(usize),
}

impl Cone {
    pub fn dim(&self) -> usize {
        match *self {
            Cone::Free(k) | Cone::Nonneg(k) => k,
            Cone::Psd(s) => svec_len(s),
        }
    }
}

/// The constraint operator `A`, possibly structured.
pub trait LinearMap: Send + Sync {
    fn rows(&self) -> usize;
    fn cols(&self) -> usize;
    /// `A x`.
    fn apply(&self, x: &DVector<f64>) -> DVector<f64>;
    /// `Aᵀ y`.
    fn apply_t(&self, y: &DVector<f64>) -> DVector<f64>;
    /// `A Aᵀ` as a dense matrix.
    fn gram(&self) -> DMatrix<f64>;
}

#[derive(Debug, Clone)]
pub struct DenseMap(pub DMatrix<f64>);

impl LinearMap for DenseMap {
    fn rows(&self) -> usize {
        self.0.nrows()
    }
    fn cols(&self) -> usize {
        self.0.ncols()
    }
    fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.0 * x
    }
    fn apply_t(&self, y: &DVector<f64>) -> DVector<f64> {
        self.0.tr_mul(y)
    }
    fn gram(&self) -> DMatrix<f64> {
        &self.0 * self.0.transpose()
    }
}

#[derive(Clone)]
pub struct ConicLP {
    pub c: DVector<f64>,
    pub a: Arc<dyn LinearMap>,
    pub b: DVector<f64>,
    pub cones: Vec<Cone>,
}

impl std::fmt::Debug for ConicLP {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ConicLP")
            .field("rows", &self.a.rows())
            .field("cols", &self.a.cols())
            .field("cones", &self.cones)
            .finish()
    }
}

impl ConicLP {
    pub fn validate(&self) -> Result<(), ConicError> {
        let layout: usize = self.cones.iter().map(Cone::dim).sum();
        let cols = self.a.cols();
        if layout != cols || self.c.len() != cols || self.b.len() != self.a.rows() {
            return Err(ConicError::Layout { layout, cols });
        }
        Ok(())
    }

    /// Offset of block `k` in the flattened variable.
    pub fn block_offset(&self, k: usize) -> Result<usize, ConicError> {
        if k >= self.cones.len() {
            return Err(ConicError::BlockIndex(k));
        }
        Ok(self.cones[..k].iter().map(Cone::dim).sum())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConicStatus {
    Converged,
    MaxIters,
    InfeasibilitySuspected,
    /// The caller's monitor accepted an intermediate iterate.
    Stopped,
}

#[derive(Debug, Clone)]
pub struct ConicSolution {
    /// Primal point, exactly in `K`.
    pub x: DVector<f64>,
    /// Dual multipliers of `Ax = b`.
    pub y: DVector<f64>,
    /// Dual slack, exactly in `K*`.
    pub s: DVector<f64>,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub gap: f64,
    pub primal_objective: f64,
    pub dual_objective: f64,
    pub status: ConicStatus,
    pub iterations: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct ConicSettings {
    pub tol: f64,
    pub max_iters: usize,
    /// Over-relaxation factor in `(0, 2)`.
    pub alpha: f64,
    pub rho: f64,
    /// Residuals are evaluated every this many iterations.
    pub check_every: usize,
    /// Rebalance `rho` from the residual ratio. Off by default: on the
    /// relaxations solved here it tends to make the iterates oscillate.
    pub adaptive_rho: bool,
    pub deadline: Option<Instant>,
}

impl Default for ConicSettings {
    fn default() -> Self {
        ConicSettings {
            tol: 1e-7,
            max_iters: 200_000,
            alpha: 1.6,
            rho: 1.0,
            check_every: 10,
            adaptive_rho: false,
            deadline: None,
        }
    }
}

/// Projects a packed symmetric vector onto the PSD cone in place.
pub fn project_psd_packed(v: &mut [f64], side: usize) -> Result<(), ConicError> {
    let x = smat(v, side);
    let eig = linalg::sym_eig(&x)?;
    if eig.min_value() >= 0.0 {
        return Ok(());
    }
    if eig.values[side - 1] <= 0.0 {
        v.iter_mut().for_each(|e| *e = 0.0);
        return Ok(());
    }
    let p = eig.recompose(|l| l.max(0.0));
    svec_into(&p, v);
    Ok(())
}

fn project_cones(cones: &[Cone], v: &mut DVector<f64>) -> Result<(), ConicError> {
    let mut off = 0;
    for cone in cones {
        let k = cone.dim();
        let slice = &mut v.as_mut_slice()[off..off + k];
        match *cone {
            Cone::Free(_) => {}
            Cone::Nonneg(_) => slice.iter_mut().for_each(|e| *e = e.max(0.0)),
            Cone::Psd(side) => project_psd_packed(slice, side)?,
        }
        off += k;
    }
    Ok(())
}

/// Returns a block of a flattened vector: a symmetric matrix for PSD blocks,
/// the raw slice otherwise.
pub enum Block {
    Vector(DVector<f64>),
    Matrix(DMatrix<f64>),
}

pub fn extract_block(v: &DVector<f64>, cones: &[Cone], k: usize) -> Result<Block, ConicError> {
    if k >= cones.len() {
        return Err(ConicError::BlockIndex(k));
    }
    let off: usize = cones[..k].iter().map(Cone::dim).sum();
    let dim = cones[k].dim();
    let slice = &v.as_slice()[off..off + dim];
    Ok(match cones[k] {
        Cone::Psd(side) => Block::Matrix(smat(slice, side)),
        _ => Block::Vector(DVector::from_column_slice(slice)),
    })
}

/// Starting point for a solve: primal `x` and dual slack `s`.
#[derive(Debug, Clone)]
pub struct WarmStart {
    pub x: DVector<f64>,
    pub s: DVector<f64>,
}

struct Residuals {
    primal: f64,
    dual: f64,
    gap: f64,
    pobj: f64,
    dobj: f64,
}

impl Residuals {
    fn merit(&self) -> f64 {
        self.primal.max(self.dual).max(self.gap)
    }
}

pub fn solve_conic(p: &ConicLP, settings: &ConicSettings, warm: Option<&WarmStart>) -> Result<ConicSolution, ConicError> {
    p.validate()?;
    let gram = p.a.gram();
    let chol = Cholesky::new(gram).ok_or(ConicError::RankDeficient)?;
    solve_with_factor(p, &chol, settings, warm)
}

/// Same as [`solve_conic`] with a precomputed factor of `AAᵀ`.
pub fn solve_with_factor(
    p: &ConicLP,
    chol: &Cholesky<f64, Dyn>,
    settings: &ConicSettings,
    warm: Option<&WarmStart>,
) -> Result<ConicSolution, ConicError> {
    solve_monitored(p, chol, settings, warm, None)
}

/// Snapshot handed to a monitor every tenth residual check.
pub struct Progress<'a> {
    pub x: &'a DVector<f64>,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub gap: f64,
    pub primal_objective: f64,
    pub dual_objective: f64,
    pub iterations: usize,
}

/// Returning `true` ends the solve with the current iterate.
pub type Monitor<'a> = &'a dyn Fn(&Progress<'_>) -> bool;

pub fn solve_monitored(
    p: &ConicLP,
    chol: &Cholesky<f64, Dyn>,
    settings: &ConicSettings,
    warm: Option<&WarmStart>,
    monitor: Option<Monitor<'_>>,
) -> Result<ConicSolution, ConicError> {
    p.validate()?;
    let n = p.a.cols();
    let mut rho = settings.rho;
    let alpha = settings.alpha;
    let bnorm = max_abs_vec(&p.b);
    let cnorm = max_abs_vec(&p.c);

    let (mut z, mut u) = match warm {
        Some(w) if w.x.len() == n && w.s.len() == n => {
            let mut z = w.x.clone();
            project_cones(&p.cones, &mut z)?;
            (z, -&w.s / rho)
        }
        _ => (DVector::zeros(n), DVector::zeros(n)),
    };

    let residuals = |z: &DVector<f64>, aty: &DVector<f64>, y: &DVector<f64>, s: &DVector<f64>| {
        let rp = max_abs_vec(&(p.a.apply(z) - &p.b)) / (1.0 + bnorm);
        let rd = max_abs_vec(&(&p.c - aty - s)) / (1.0 + cnorm);
        let pobj = p.c.dot(z);
        let dobj = p.b.dot(y);
        let gap = (pobj - dobj).abs() / (1.0 + pobj.abs() + dobj.abs());
        Residuals {
            primal: rp,
            dual: rd,
            gap,
            pobj,
            dobj,
        }
    };

    let mut best: Option<(f64, ConicSolution)> = None;
    let mut iterations = 0;
    let mut status = ConicStatus::MaxIters;
    let check = settings.check_every.max(1);
    let mut y = DVector::zeros(p.a.rows());
    let mut aty = DVector::zeros(n);

    while iterations < settings.max_iters {
        iterations += 1;
        let v = &z - &u - &p.c / rho;
        let w = chol.solve(&(p.a.apply(&v) - &p.b));
        let atw = p.a.apply_t(&w);
        let xt = &v - &atw;
        let xh = &xt * alpha + &z * (1.0 - alpha);
        let mut znew = &xh + &u;
        project_cones(&p.cones, &mut znew)?;
        u += &xh - &znew;
        z = znew;

        if iterations % check != 0 && iterations != settings.max_iters {
            continue;
        }
        y = &w * (-rho);
        aty = &atw * (-rho);
        let s = &u * (-rho);
        let r = residuals(&z, &aty, &y, &s);
        let merit = r.merit();
        if !merit.is_finite() || max_abs_vec(&z) > 1e14 || max_abs_vec(&u) * rho > 1e14 {
            status = ConicStatus::InfeasibilitySuspected;
            break;
        }
        if best.as_ref().is_none_or(|(m, _)| merit < *m) {
            best = Some((
                merit,
                ConicSolution {
                    x: z.clone(),
                    y: y.clone(),
                    s: s.clone(),
                    primal_residual: r.primal,
                    dual_residual: r.dual,
                    gap: r.gap,
                    primal_objective: r.pobj,
                    dual_objective: r.dobj,
                    status: ConicStatus::MaxIters,
                    iterations,
                },
            ));
        }
        if merit <= settings.tol {
            status = ConicStatus::Converged;
            break;
        }
        if iterations % (check * 10) == 0 && monitor.is_some_and(|f| {
                f(&Progress {
                    x: &z,
                    primal_residual: r.primal,
                    dual_residual: r.dual,
                    gap: r.gap,
                    primal_objective: r.pobj,
                    dual_objective: r.dobj,
                    iterations,
                })
            }) {
            best = Some((
                0.0,
                ConicSolution {
                    x: z.clone(),
                    y: y.clone(),
                    s,
                    primal_residual: r.primal,
                    dual_residual: r.dual,
                    gap: r.gap,
                    primal_objective: r.pobj,
                    dual_objective: r.dobj,
                    status: ConicStatus::Stopped,
                    iterations,
                },
            ));
            status = ConicStatus::Stopped;
            break;
        }
        if settings.deadline.is_some_and(|d| Instant::now() >= d) {
            break;
        }
        // Rebalance the penalty every few checks; `AAᵀ` does not depend on it.
        if settings.adaptive_rho && iterations % (check * 5) == 0 {
            let ratio = (r.primal / r.dual.max(1e-300)).sqrt();
            if !(0.2..=5.0).contains(&ratio) && ratio.is_finite() {
                let new_rho = (rho * ratio).clamp(1e-6, 1e6);
                u *= rho / new_rho;
                rho = new_rho;
            }
        }
    }

    let (_, mut sol) = match best {
        Some(b) => b,
        None => {
            let s = &u * (-rho);
            let r = residuals(&z, &aty, &y, &s);
            (
                0.0,
                ConicSolution {
                    x: z,
                    y,
                    s,
                    primal_residual: r.primal,
                    dual_residual: r.dual,
                    gap: r.gap,
                    primal_objective: r.pobj,
                    dual_objective: r.dobj,
                    status,
                    iterations,
                },
            )
        }
    };
    if status == ConicStatus::Converged {
        sol.status = ConicStatus::Converged;
    } else {
        sol.status = status;
    }
    sol.iterations = iterations;
    Ok(sol)
}
