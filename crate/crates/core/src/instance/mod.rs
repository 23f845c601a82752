//! Problem data, reduction to pure inequality form, and the enclosing radius.

mod format;
mod synthetic;

pub use format::{load_instance, parse_canonical, parse_dense_text, write_canonical, Format};
pub use synthetic::{generate_synthetic, synthetic_interior_point, Distribution, SyntheticSpec};

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::linalg::symmetrize;
use crate::lp::{self, LpOutcome};

#[derive(Debug, Error)]
pub enum InstanceError {
    #[error("line {line}, column {col}: {msg}")]
    Parse { line: usize, col: usize, msg: String },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("non-finite entry in {0}")]
    NonFinite(String),
    #[error("feasible region is unbounded along coordinate {0}")]
    UnboundedRegion(usize),
    #[error("feasible region is empty")]
    EmptyRegion,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// `min xᵀQx + 2dᵀx + constant` over inequality, equality and bound rows.
#[derive(Debug, Clone, PartialEq)]
pub struct QpInstance {
    pub name: String,
    pub n: usize,
    pub q: DMatrix<f64>,
    pub d: DVector<f64>,
    pub constant: f64,
    pub a_ineq: DMatrix<f64>,
    pub b_ineq: DVector<f64>,
    pub a_eq: DMatrix<f64>,
    pub b_eq: DVector<f64>,
    pub lower: Option<DVector<f64>>,
    pub upper: Option<DVector<f64>>,
}

fn check_finite(what: &str, vals: &[f64]) -> Result<(), InstanceError> {
    if vals.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(InstanceError::NonFinite(what.to_string()))
    }
}

fn check_dims(what: &str, got: (usize, usize), want: (usize, usize)) -> Result<(), InstanceError> {
    if got == want {
        Ok(())
    } else {
        Err(InstanceError::Dimension(format!(
            "{what} is {}x{}, expected {}x{}",
            got.0, got.1, want.0, want.1
        )))
    }
}

impl QpInstance {
    /// Validates dimensions and finiteness and symmetrizes `Q`.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        name: impl Into<String>,
        mut q: DMatrix<f64>,
        d: DVector<f64>,
        a_ineq: DMatrix<f64>,
        b_ineq: DVector<f64>,
        a_eq: DMatrix<f64>,
        b_eq: DVector<f64>,
        lower: Option<DVector<f64>>,
        upper: Option<DVector<f64>>,
    ) -> Result<Self, InstanceError> {
        let n = d.len();
        check_dims("Q", q.shape(), (n, n))?;
        check_dims("A", (a_ineq.nrows(), a_ineq.ncols()), (b_ineq.len(), n))?;
        check_dims("Aeq", (a_eq.nrows(), a_eq.ncols()), (b_eq.len(), n))?;
        for (what, v) in [("lb", &lower), ("ub", &upper)] {
            if let Some(v) = v {
                check_dims(what, (v.len(), 1), (n, 1))?;
                if v.iter().any(|x| x.is_nan()) {
                    return Err(InstanceError::NonFinite(what.to_string()));
                }
            }
        }
        check_finite("Q", q.as_slice())?;
        check_finite("d", d.as_slice())?;
        check_finite("A", a_ineq.as_slice())?;
        check_finite("b", b_ineq.as_slice())?;
        check_finite("Aeq", a_eq.as_slice())?;
        check_finite("beq", b_eq.as_slice())?;
        symmetrize(&mut q);
        Ok(QpInstance {
            name: name.into(),
            n,
            q,
            d,
            constant: 0.0,
            a_ineq,
            b_ineq,
            a_eq,
            b_eq,
            lower,
            upper,
        })
    }

    pub fn with_constant(mut self, constant: f64) -> Self {
        self.constant = constant;
        self
    }

    pub fn m(&self) -> usize {
        self.a_ineq.nrows()
    }

    pub fn m_eq(&self) -> usize {
        self.a_eq.nrows()
    }

    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        objective(&self.q, &self.d, self.constant, x)
    }

    /// Whether `x` satisfies every row to `tol·(1+|rhs|)`.
    pub fn is_feasible(&self, x: &DVector<f64>, tol: f64) -> bool {
        let ineq = (&self.a_ineq * x - &self.b_ineq)
            .iter()
            .zip(self.b_ineq.iter())
            .all(|(r, b)| *r <= tol * (1.0 + b.abs()));
        let eq = (&self.a_eq * x - &self.b_eq)
            .iter()
            .zip(self.b_eq.iter())
            .all(|(r, b)| r.abs() <= tol * (1.0 + b.abs()));
        let lo = self.lower.as_ref().is_none_or(|l| {
            l.iter().zip(x.iter()).all(|(l, x)| *x >= *l - tol * (1.0 + l.abs()))
        });
        let hi = self.upper.as_ref().is_none_or(|u| {
            u.iter().zip(x.iter()).all(|(u, x)| *x <= *u + tol * (1.0 + u.abs()))
        });
        ineq && eq && lo && hi
    }
}

pub fn objective(q: &DMatrix<f64>, d: &DVector<f64>, constant: f64, x: &DVector<f64>) -> f64 {
    (q * x).dot(x) + 2.0 * d.dot(x) + constant
}

/// Where a row of the reduced system came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowTag {
    Inequality(usize),
    /// An all-ones inequality row.
    Normalization(usize),
    /// `sign = 1` is `aᵀx ≤ β`, `sign = -1` is `−aᵀx ≤ −β`.
    EqualitySplit { row: usize, sign: i8 },
    Lower(usize),
    Upper(usize),
    Cut(usize),
}

/// The instance in the form `min Φ(x)` subject to `Ax ≤ b` with bounded feasible set.
#[derive(Debug, Clone, PartialEq)]
pub struct ReducedInstance {
    pub name: String,
    pub n: usize,
    pub q: DMatrix<f64>,
    pub d: DVector<f64>,
    pub constant: f64,
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub provenance: Vec<RowTag>,
    pub radius: f64,
}

impl ReducedInstance {
    /// Builds a reduced instance from raw rows and certifies the radius.
    pub fn from_rows(
        name: impl Into<String>,
        mut q: DMatrix<f64>,
        d: DVector<f64>,
        constant: f64,
        a: DMatrix<f64>,
        b: DVector<f64>,
    ) -> Result<Self, InstanceError> {
        let n = d.len();
        check_dims("Q", q.shape(), (n, n))?;
        check_dims("A", (a.nrows(), a.ncols()), (b.len(), n))?;
        check_finite("Q", q.as_slice())?;
        check_finite("d", d.as_slice())?;
        check_finite("A", a.as_slice())?;
        check_finite("b", b.as_slice())?;
        symmetrize(&mut q);
        let radius = radius_bound(&a, &b)?;
        let provenance = (0..a.nrows()).map(RowTag::Inequality).collect();
        Ok(ReducedInstance {
            name: name.into(),
            n,
            q,
            d,
            constant,
            a,
            b,
            provenance,
            radius,
        })
    }

    pub fn m(&self) -> usize {
        self.a.nrows()
    }

    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        objective(&self.q, &self.d, self.constant, x)
    }

    /// Row residuals `Ax − b`.
    pub fn slack(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.a * x - &self.b
    }

    pub fn max_violation(&self, x: &DVector<f64>) -> f64 {
        self.slack(x).iter().fold(f64::NEG_INFINITY, |m, v| m.max(*v))
    }

    pub fn is_feasible(&self, x: &DVector<f64>, tol: f64) -> bool {
        self.slack(x)
            .iter()
            .zip(self.b.iter())
            .all(|(r, b)| *r <= tol * (1.0 + b.abs()))
    }

    /// Same objective on `{Ax ≤ b, rowᵀx ≤ rhs}`; the radius remains valid.
    pub fn with_row(&self, row: &DVector<f64>, rhs: f64, tag: RowTag) -> ReducedInstance {
        let m = self.m();
        let mut a = self.a.clone().insert_row(m, 0.0);
        a.set_row(m, &row.transpose());
        let b = self.b.clone().push(rhs);
        let mut provenance = self.provenance.clone();
        provenance.push(tag);
        ReducedInstance {
            a,
            b,
            provenance,
            ..self.clone()
        }
    }
}

/// Rewrites every equality and finite bound as `≤` rows and certifies boundedness.
pub fn reduce(inst: &QpInstance) -> Result<ReducedInstance, InstanceError> {
    let n = inst.n;
    let mut rows: Vec<DVector<f64>> = Vec::new();
    let mut rhs = Vec::new();
    let mut provenance = Vec::new();
    for i in 0..inst.m() {
        let row = inst.a_ineq.row(i).transpose();
        let tag = if n > 0 && row.iter().all(|&v| v == 1.0) {
            RowTag::Normalization(i)
        } else {
            RowTag::Inequality(i)
        };
        rows.push(row);
        rhs.push(inst.b_ineq[i]);
        provenance.push(tag);
    }
    for i in 0..inst.m_eq() {
        let row = inst.a_eq.row(i).transpose();
        rows.push(row.clone());
        rhs.push(inst.b_eq[i]);
        provenance.push(RowTag::EqualitySplit { row: i, sign: 1 });
        rows.push(-row);
        rhs.push(-inst.b_eq[i]);
        provenance.push(RowTag::EqualitySplit { row: i, sign: -1 });
    }
    for j in 0..n {
        if let Some(l) = inst.lower.as_ref().map(|l| l[j]).filter(|l| l.is_finite()) {
            let mut row = DVector::zeros(n);
            row[j] = -1.0;
            rows.push(row);
            rhs.push(-l);
            provenance.push(RowTag::Lower(j));
        }
        if let Some(u) = inst.upper.as_ref().map(|u| u[j]).filter(|u| u.is_finite()) {
            let mut row = DVector::zeros(n);
            row[j] = 1.0;
            rows.push(row);
            rhs.push(u);
            provenance.push(RowTag::Upper(j));
        }
    }
    let mut a = DMatrix::zeros(rows.len(), n);
    for (i, r) in rows.iter().enumerate() {
        a.set_row(i, &r.transpose());
    }
    let b = DVector::from_vec(rhs);
    let radius = radius_bound(&a, &b)?;
    Ok(ReducedInstance {
        name: inst.name.clone(),
        n,
        q: inst.q.clone(),
        d: inst.d.clone(),
        constant: inst.constant,
        a,
        b,
        provenance,
        radius,
    })
}

/// Coordinate box `[l, u]` enclosing `{x : Ax ≤ b}` from `2n` LPs.
pub fn bounding_box(
    a: &DMatrix<f64>,
    b: &DVector<f64>,
) -> Result<(DVector<f64>, DVector<f64>), InstanceError> {
    let n = a.ncols();
    let mut lo = DVector::zeros(n);
    let mut hi = DVector::zeros(n);
    for j in 0..n {
        for (sign, out) in [(1.0, &mut lo), (-1.0, &mut hi)] {
            let mut c = DVector::zeros(n);
            c[j] = sign;
            match lp::minimize(&c, a, b) {
                LpOutcome::Optimal { value, .. } => out[j] = sign * value,
                LpOutcome::Unbounded => return Err(InstanceError::UnboundedRegion(j)),
                LpOutcome::Infeasible => return Err(InstanceError::EmptyRegion),
            }
        }
    }
    Ok((lo, hi))
}

/// Radius `r₀` of a ball around the origin containing `{x : Ax ≤ b}`.
///
/// Uses the coordinate box; when the region lies in the nonnegative orthant
/// the bound `max 1ᵀx` is also valid and the smaller one is kept.
pub fn radius_bound(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<f64, InstanceError> {
    let n = a.ncols();
    if n == 0 {
        return Ok(0.0);
    }
    let (lo, hi) = bounding_box(a, b)?;
    let corner = lo.zip_map(&hi, |l, u| l.abs().max(u.abs()));
    let mut r = corner.norm();
    if lo.iter().all(|&l| l >= 0.0) {
        let c = DVector::from_element(n, -1.0);
        if let LpOutcome::Optimal { value, .. } = lp::minimize(&c, a, b) {
            r = r.min(-value);
        }
    }
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn unit_box(n: usize) -> QpInstance {
        QpInstance::new(
            "box",
            DMatrix::identity(n, n),
            DVector::zeros(n),
            DMatrix::zeros(0, n),
            DVector::zeros(0),
            DMatrix::zeros(0, n),
            DVector::zeros(0),
            Some(DVector::zeros(n)),
            Some(DVector::from_element(n, 1.0)),
        )
        .unwrap()
    }

    #[test]
    fn box_reduces_to_four_rows() {
        let red = reduce(&unit_box(2)).unwrap();
        assert_eq!(red.m(), 4);
        assert_abs_diff_eq!(red.radius, 2f64.sqrt(), epsilon = 1e-9);
    }

    #[test]
    fn equality_splits_into_two_rows() {
        let mut inst = unit_box(2);
        inst.a_eq = DMatrix::from_row_slice(1, 2, &[1.0, 1.0]);
        inst.b_eq = DVector::from_vec(vec![1.0]);
        let red = reduce(&inst).unwrap();
        assert_eq!(red.m(), 6);
        let splits = red
            .provenance
            .iter()
            .filter(|t| matches!(t, RowTag::EqualitySplit { .. }))
            .count();
        let bounds = red
            .provenance
            .iter()
            .filter(|t| matches!(t, RowTag::Lower(_) | RowTag::Upper(_)))
            .count();
        assert_eq!((splits, bounds), (2, 4));
    }

    #[test]
    fn orthant_is_unbounded() {
        let mut inst = unit_box(2);
        inst.upper = None;
        assert!(matches!(reduce(&inst), Err(InstanceError::UnboundedRegion(_))));
    }

    #[test]
    fn empty_region_detected() {
        let mut inst = unit_box(1);
        inst.a_ineq = DMatrix::from_row_slice(1, 1, &[1.0]);
        inst.b_ineq = DVector::from_vec(vec![-1.0]);
        assert!(matches!(reduce(&inst), Err(InstanceError::EmptyRegion)));
    }

    #[test]
    fn simplex_radius_is_one() {
        let mut a = -DMatrix::<f64>::identity(3, 3);
        a = a.insert_row(3, 1.0);
        let b = DVector::from_vec(vec![0.0, 0.0, 0.0, 1.0]);
        assert_abs_diff_eq!(radius_bound(&a, &b).unwrap(), 1.0, epsilon = 1e-9);
    }

    #[test]
    fn singleton_radius() {
        let a = DMatrix::from_row_slice(2, 1, &[1.0, -1.0]);
        let b = DVector::from_vec(vec![0.5, -0.5]);
        assert_abs_diff_eq!(radius_bound(&a, &b).unwrap(), 0.5, epsilon = 1e-12);
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let err = QpInstance::new(
            "bad",
            DMatrix::identity(2, 2),
            DVector::zeros(2),
            DMatrix::zeros(2, 2),
            DVector::zeros(3),
            DMatrix::zeros(0, 2),
            DVector::zeros(0),
            None,
            None,
        );
        assert!(matches!(err, Err(InstanceError::Dimension(_))));
    }

    #[test]
    fn appended_row_keeps_radius() {
        let red = reduce(&unit_box(2)).unwrap();
        let cut = red.with_row(&DVector::from_vec(vec![1.0, 1.0]), 1.0, RowTag::Cut(0));
        assert_eq!(cut.m(), 5);
        assert_eq!(cut.radius, red.radius);
        assert_eq!(cut.provenance[4], RowTag::Cut(0));
    }
}
