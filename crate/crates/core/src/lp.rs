//! Thin wrapper over `minilp` for the small dense LPs used by the solver.

use minilp::{ComparisonOp, OptimizationDirection, Problem};
use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone, PartialEq)]
pub enum LpOutcome {
    Optimal { x: DVector<f64>, value: f64 },
    Infeasible,
    Unbounded,
}

impl LpOutcome {
    pub fn value(&self) -> Option<f64> {
        match self {
            LpOutcome::Optimal { value, .. } => Some(*value),
            _ => None,
        }
    }
}

/// `min cᵀx` subject to `A_le x ≤ b_le`, `A_eq x = b_eq`, `lower ≤ x ≤ upper`.
#[derive(Debug, Clone)]
pub struct LinearProgram {
    pub c: DVector<f64>,
    pub a_le: DMatrix<f64>,
    pub b_le: DVector<f64>,
    pub a_eq: DMatrix<f64>,
    pub b_eq: DVector<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl LinearProgram {
    /// Free variables with inequality rows only.
    pub fn inequality(c: DVector<f64>, a: DMatrix<f64>, b: DVector<f64>) -> Self {
        let n = c.len();
        LinearProgram {
            c,
            a_le: a,
            b_le: b,
            a_eq: DMatrix::zeros(0, n),
            b_eq: DVector::zeros(0),
            lower: vec![f64::NEG_INFINITY; n],
            upper: vec![f64::INFINITY; n],
        }
    }

    pub fn solve(&self) -> LpOutcome {
        let n = self.c.len();
        let mut prob = Problem::new(OptimizationDirection::Minimize);
        let vars: Vec<_> = (0..n)
            .map(|j| prob.add_var(self.c[j], (self.lower[j], self.upper[j])))
            .collect();
        let mut add_rows = |a: &DMatrix<f64>, b: &DVector<f64>, op: ComparisonOp| {
            for i in 0..a.nrows() {
                let expr: Vec<_> = (0..n)
                    .filter(|&j| a[(i, j)] != 0.0)
                    .map(|j| (vars[j], a[(i, j)]))
                    .collect();
                if expr.is_empty() {
                    // minilp rejects empty rows; keep their feasibility meaning.
                    let ok = match op {
                        ComparisonOp::Le => b[i] >= 0.0,
                        ComparisonOp::Ge => b[i] <= 0.0,
                        ComparisonOp::Eq => b[i] == 0.0,
                    };
                    if !ok {
                        return false;
                    }
                    continue;
                }
                prob.add_constraint(expr.as_slice(), op, b[i]);
            }
            true
        };
        if !add_rows(&self.a_le, &self.b_le, ComparisonOp::Le)
            || !add_rows(&self.a_eq, &self.b_eq, ComparisonOp::Eq)
        {
            return LpOutcome::Infeasible;
        }
        match prob.solve() {
            Ok(sol) => {
                let x = DVector::from_iterator(n, vars.iter().map(|&v| *sol.var_value(v)));
                let value = self.c.dot(&x);
                // minilp can report an unbounded ray as an infinite "optimum".
                if !value.is_finite() || x.iter().any(|v| !v.is_finite()) {
                    return LpOutcome::Unbounded;
                }
                LpOutcome::Optimal { x, value }
            }
            Err(minilp::Error::Infeasible) => LpOutcome::Infeasible,
            Err(minilp::Error::Unbounded) => LpOutcome::Unbounded,
        }
    }
}

/// `min cᵀx` over `{x : Ax ≤ b}` with `x` free.
pub fn minimize(c: &DVector<f64>, a: &DMatrix<f64>, b: &DVector<f64>) -> LpOutcome {
    LinearProgram::inequality(c.clone(), a.clone(), b.clone()).solve()
}

/// Whether `{x : Ax ≤ b}` is nonempty.
pub fn is_feasible(a: &DMatrix<f64>, b: &DVector<f64>) -> bool {
    !matches!(minimize(&DVector::zeros(a.ncols()), a, b), LpOutcome::Infeasible)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_square() -> (DMatrix<f64>, DVector<f64>) {
        let a = DMatrix::from_row_slice(4, 2, &[1.0, 0.0, 0.0, 1.0, -1.0, 0.0, 0.0, -1.0]);
        (a, DVector::from_vec(vec![1.0, 1.0, 0.0, 0.0]))
    }

    #[test]
    fn box_corner() {
        let (a, b) = unit_square();
        match minimize(&DVector::from_vec(vec![-1.0, -2.0]), &a, &b) {
            LpOutcome::Optimal { x, value } => {
                assert!((value + 3.0).abs() < 1e-9);
                assert!((x[0] - 1.0).abs() < 1e-9 && (x[1] - 1.0).abs() < 1e-9);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unbounded_and_infeasible() {
        let a = DMatrix::from_row_slice(1, 1, &[-1.0]);
        let b = DVector::from_vec(vec![0.0]);
        assert_eq!(minimize(&DVector::from_vec(vec![-1.0]), &a, &b), LpOutcome::Unbounded);
        let a = DMatrix::from_row_slice(2, 1, &[1.0, -1.0]);
        let b = DVector::from_vec(vec![0.0, -1.0]);
        assert!(!is_feasible(&a, &b));
    }

    #[test]
    fn equality_and_bounds() {
        let lp = LinearProgram {
            c: DVector::from_vec(vec![1.0, 1.0]),
            a_le: DMatrix::zeros(0, 2),
            b_le: DVector::zeros(0),
            a_eq: DMatrix::from_row_slice(1, 2, &[1.0, -1.0]),
            b_eq: DVector::from_vec(vec![0.5]),
            lower: vec![0.0, 0.0],
            upper: vec![f64::INFINITY; 2],
        };
        assert!((lp.solve().value().unwrap() - 0.5).abs() < 1e-9);
    }
}
