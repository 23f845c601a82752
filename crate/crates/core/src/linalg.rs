//! Dense symmetric linear algebra shared by the solver modules.
//!
//! Everything here is dense: the target problems have at most a few hundred
//! variables and constraint rows.

use nalgebra::{DMatrix, DVector, SymmetricEigen, SVD};
use thiserror::Error;

/// Relative threshold below which singular values count as zero.
pub const DEFAULT_RANK_TOL: f64 = 1e-10;

const EIG_MAX_ITERS: usize = 10_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("eigendecomposition of a {0}x{0} matrix did not converge")]
    EigNoConvergence(usize),
    #[error("singular value decomposition of a {0}x{1} matrix did not converge")]
    SvdNoConvergence(usize, usize),
    #[error("matrix contains non-finite entries")]
    NonFinite,
}

/// Spectral decomposition `S = V diag(values) Vᵀ` with ascending eigenvalues.
#[derive(Debug, Clone)]
pub struct SymEig {
    pub values: DVector<f64>,
    pub vectors: DMatrix<f64>,
}

impl SymEig {
    pub fn min_value(&self) -> f64 {
        if self.values.is_empty() {
            f64::INFINITY
        } else {
            self.values[0]
        }
    }

    /// Rebuilds `Σ f(λᵢ) vᵢvᵢᵀ`.
    pub fn recompose(&self, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
        let n = self.vectors.nrows();
        let mut scaled = self.vectors.clone();
        for (j, mut col) in scaled.column_iter_mut().enumerate() {
            col *= f(self.values[j]);
        }
        let mut out = DMatrix::zeros(n, n);
        out.gemm(1.0, &scaled, &self.vectors.transpose(), 0.0);
        symmetrize(&mut out);
        out
    }
}

/// Overwrites `m` with `(m + mᵀ)/2`.
pub fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

pub fn max_abs_vec(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0_f64, |acc, x| acc.max(x.abs()))
}

/// Full eigendecomposition of a symmetric matrix, eigenvalues ascending.
pub fn sym_eig(s: &DMatrix<f64>) -> Result<SymEig, LinalgError> {
    let n = s.nrows();
    if s.iter().any(|v| !v.is_finite()) {
        return Err(LinalgError::NonFinite);
    }
    if n == 0 {
        return Ok(SymEig {
            values: DVector::zeros(0),
            vectors: DMatrix::zeros(0, 0),
        });
    }
    let mut sym = s.clone();
    symmetrize(&mut sym);
    let eig = SymmetricEigen::try_new(sym, f64::EPSILON, EIG_MAX_ITERS)
        .ok_or(LinalgError::EigNoConvergence(n))?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]).then(a.cmp(&b)));
    let values = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    Ok(SymEig { values, vectors })
}

/// Smallest eigenvalue of a symmetric matrix (`+∞` for the empty matrix).
pub fn lambda_min(s: &DMatrix<f64>) -> Result<f64, LinalgError> {
    Ok(sym_eig(s)?.min_value())
}

/// Projection onto the PSD cone in the Frobenius norm.
pub fn psd_project(s: &DMatrix<f64>) -> Result<DMatrix<f64>, LinalgError> {
    let eig = sym_eig(s)?;
    if eig.min_value() >= 0.0 {
        let mut out = s.clone();
        symmetrize(&mut out);
        return Ok(out);
    }
    Ok(eig.recompose(|l| l.max(0.0)))
}

/// Singular values and right singular vectors of `a` with a full `n×n` basis.
fn full_right_svd(a: &DMatrix<f64>) -> Result<(Vec<f64>, DMatrix<f64>), LinalgError> {
    let (k, n) = a.shape();
    if a.iter().any(|v| !v.is_finite()) {
        return Err(LinalgError::NonFinite);
    }
    // Pad with zero rows so that Vᵀ comes back square.
    let rows = k.max(n);
    let mut padded = DMatrix::zeros(rows, n);
    padded.view_mut((0, 0), (k, n)).copy_from(a);
    let svd = SVD::try_new(padded, false, true, f64::EPSILON, EIG_MAX_ITERS)
        .ok_or(LinalgError::SvdNoConvergence(k, n))?;
    let vt = svd.v_t.expect("requested v_t");
    let sv: Vec<f64> = svd.singular_values.iter().copied().collect();
    Ok((sv, vt.transpose()))
}

/// Numerical rank with singular values below `tol·σ_max` treated as zero.
pub fn rank(a: &DMatrix<f64>, tol: f64) -> Result<usize, LinalgError> {
    if a.nrows() == 0 || a.ncols() == 0 {
        return Ok(0);
    }
    let (sv, _) = full_right_svd(a)?;
    let smax = sv.iter().fold(0.0_f64, |m, v| m.max(*v));
    if smax == 0.0 {
        return Ok(0);
    }
    Ok(sv.iter().filter(|&&s| s > tol * smax).count())
}

/// Orthonormal basis of `{p : A p = 0}` as the columns of an `n×(n−r)` matrix.
pub fn nullspace_basis(a: &DMatrix<f64>, tol: f64) -> Result<DMatrix<f64>, LinalgError> {
    let n = a.ncols();
    if a.nrows() == 0 {
        return Ok(DMatrix::identity(n, n));
    }
    let (sv, v) = full_right_svd(a)?;
    let smax = sv.iter().fold(0.0_f64, |m, s| m.max(*s));
    let null_cols: Vec<usize> = (0..n)
        .filter(|&j| smax == 0.0 || sv[j] <= tol * smax)
        .collect();
    let mut z = DMatrix::zeros(n, null_cols.len());
    for (dst, &src) in null_cols.iter().enumerate() {
        z.set_column(dst, &v.column(src));
    }
    Ok(z)
}

/// Rows of `a` selected by `idx`, in the given order.
pub fn select_rows(a: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(idx.len(), a.ncols());
    for (dst, &src) in idx.iter().enumerate() {
        out.set_row(dst, &a.row(src));
    }
    out
}

/// `ZᵀQZ` together with its smallest eigenvalue.
///
/// An empty basis yields `λ_min = +∞`: `Q` restricted to `{0}` counts as
/// positive definite.
pub fn reduced_hessian(
    q: &DMatrix<f64>,
    z: &DMatrix<f64>,
) -> Result<(DMatrix<f64>, f64), LinalgError> {
    if z.ncols() == 0 {
        return Ok((DMatrix::zeros(0, 0), f64::INFINITY));
    }
    let mut red = z.transpose() * q * z;
    symmetrize(&mut red);
    let lmin = lambda_min(&red)?;
    Ok((red, lmin))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn sym_from(vals: &[f64], n: usize) -> DMatrix<f64> {
        let mut m = DMatrix::from_row_slice(n, n, vals);
        symmetrize(&mut m);
        m
    }

    #[test]
    fn identity_eigenvalues() {
        let e = sym_eig(&DMatrix::identity(2, 2)).unwrap();
        assert_abs_diff_eq!(e.values[0], 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(e.values[1], 1.0, epsilon = 1e-14);
    }

    #[test]
    fn two_by_two_characteristic_roots() {
        // λ² − λ − ¼ = 0
        let e = sym_eig(&DMatrix::from_row_slice(2, 2, &[0.0, 0.5, 0.5, 1.0])).unwrap();
        assert_abs_diff_eq!(e.values[0], (1.0 - 2f64.sqrt()) / 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(e.values[1], (1.0 + 2f64.sqrt()) / 2.0, epsilon = 1e-12);
    }

    #[test]
    fn diagonal_sorted() {
        let e = sym_eig(&DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, -3.0]))).unwrap();
        assert_eq!(e.values.as_slice(), &[-3.0, 2.0]);
    }

    #[test]
    fn nonfinite_rejected() {
        let m = DMatrix::from_row_slice(1, 1, &[f64::NAN]);
        assert_eq!(sym_eig(&m).unwrap_err(), LinalgError::NonFinite);
    }

    #[test]
    fn psd_projection_cases() {
        let psd = sym_from(&[2.0, 1.0, 1.0, 2.0], 2);
        assert!(max_abs(&(psd_project(&psd).unwrap() - &psd)) < 1e-12);
        let d = DMatrix::from_diagonal(&DVector::from_vec(vec![-1.0, 2.0]));
        let p = psd_project(&d).unwrap();
        assert!(max_abs(&(p - DMatrix::from_diagonal(&DVector::from_vec(vec![0.0, 2.0])))) < 1e-12);
        let neg = -DMatrix::<f64>::identity(3, 3);
        assert!(max_abs(&psd_project(&neg).unwrap()) < 1e-14);
    }

    #[test]
    fn nullspace_examples() {
        let z = nullspace_basis(&DMatrix::from_row_slice(1, 2, &[1.0, 0.0]), DEFAULT_RANK_TOL).unwrap();
        assert_eq!(z.ncols(), 1);
        assert_abs_diff_eq!(z[(0, 0)], 0.0, epsilon = 1e-14);
        assert_abs_diff_eq!(z[(1, 0)].abs(), 1.0, epsilon = 1e-14);

        let z = nullspace_basis(&DMatrix::identity(2, 2), DEFAULT_RANK_TOL).unwrap();
        assert_eq!(z.ncols(), 0);

        let z = nullspace_basis(&DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]), DEFAULT_RANK_TOL)
            .unwrap();
        assert_eq!(z.ncols(), 1);
        let s = 0.5f64.sqrt();
        assert_abs_diff_eq!(z[(0, 0)].abs(), s, epsilon = 1e-12);
        assert_abs_diff_eq!(z[(0, 0)] + z[(1, 0)], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn reduced_hessian_examples() {
        let q = DMatrix::from_row_slice(2, 2, &[0.0, 0.5, 0.5, 1.0]);
        let z = DMatrix::from_column_slice(2, 1, &[0.0, 1.0]);
        let (red, lmin) = reduced_hessian(&q, &z).unwrap();
        assert_abs_diff_eq!(red[(0, 0)], 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(lmin, 1.0, epsilon = 1e-14);

        let (_, lmin) = reduced_hessian(&q, &DMatrix::zeros(2, 0)).unwrap();
        assert_eq!(lmin, f64::INFINITY);

        let (_, lmin) = reduced_hessian(&(-DMatrix::<f64>::identity(2, 2)), &DMatrix::identity(2, 2)).unwrap();
        assert_abs_diff_eq!(lmin, -1.0, epsilon = 1e-14);
    }

    fn arb_sym(max_n: usize) -> impl Strategy<Value = DMatrix<f64>> {
        (1..=max_n).prop_flat_map(|n| {
            prop::collection::vec(-10.0..10.0f64, n * n).prop_map(move |v| sym_from(&v, n))
        })
    }

    fn arb_rect() -> impl Strategy<Value = DMatrix<f64>> {
        (1usize..7, 1usize..7, 0usize..3).prop_flat_map(|(k, n, dup)| {
            prop::collection::vec(-5.0..5.0f64, k * n).prop_map(move |v| {
                let mut a = DMatrix::from_row_slice(k, n, &v);
                // Duplicate rows exercise rank deficiency.
                for r in 0..dup.min(k.saturating_sub(1)) {
                    let src = a.row(0).clone_owned();
                    a.set_row(r + 1, &src);
                }
                a
            })
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]

        #[test]
        fn eig_roundtrip(s in arb_sym(60)) {
            let e = sym_eig(&s).unwrap();
            let n = s.nrows();
            let orth = e.vectors.transpose() * &e.vectors - DMatrix::<f64>::identity(n, n);
            prop_assert!(max_abs(&orth) <= 1e-10);
            let rec = e.recompose(|l| l);
            prop_assert!(max_abs(&(rec - &s)) <= 1e-8 * (1.0 + max_abs(&s)));
            for w in e.values.as_slice().windows(2) {
                prop_assert!(w[0] <= w[1]);
            }
        }

        #[test]
        fn psd_project_idempotent(s in arb_sym(12)) {
            let p = psd_project(&s).unwrap();
            prop_assert!(lambda_min(&p).unwrap() >= -1e-10 * (1.0 + max_abs(&s)));
            let pp = psd_project(&p).unwrap();
            prop_assert!(max_abs(&(pp - &p)) <= 1e-10 * (1.0 + max_abs(&s)));
        }

        #[test]
        fn nullspace_rank_nullity(a in arb_rect()) {
            let z = nullspace_basis(&a, DEFAULT_RANK_TOL).unwrap();
            let r = rank(&a, DEFAULT_RANK_TOL).unwrap();
            prop_assert_eq!(r + z.ncols(), a.ncols());
            if z.ncols() > 0 {
                prop_assert!(max_abs(&(&a * &z)) <= 1e-8 * (1.0 + max_abs(&a)));
                let g = z.transpose() * &z - DMatrix::<f64>::identity(z.ncols(), z.ncols());
                prop_assert!(max_abs(&g) <= 1e-10);
            }
        }
    }
}
