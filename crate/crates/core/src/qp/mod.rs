//! Dense convex QPs `min ½ zᵀHz + cᵀz  s.t.  Az ≤ b`.

mod active_set;
mod closed_form;

pub use closed_form::{all_active_gain, all_active_gain_min_real_eigenvalue, closed_form_all_active, ClosedForm};

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, Error, Result};
use crate::scalar::Real;

#[derive(Clone, Debug, PartialEq)]
pub struct QpProblem<T: Real> {
    h: DMatrix<T>,
    c: DVector<T>,
    a: DMatrix<T>,
    b: DVector<T>,
}

impl<T: Real> QpProblem<T> {
    /// Validates shapes, symmetry and positive semidefiniteness of `H`.
    pub fn new(h: DMatrix<T>, c: DVector<T>, a: DMatrix<T>, b: DVector<T>) -> Result<Self> {
        let d = c.len();
        check_dim("QP H rows", d, h.nrows())?;
        check_dim("QP H columns", d, h.ncols())?;
        check_dim("QP A columns", d, a.ncols())?;
        check_dim("QP b length", a.nrows(), b.len())?;
        if h.iter()
            .chain(c.iter())
            .chain(a.iter())
            .chain(b.iter())
            .any(|v| !v.is_finite())
        {
            return Err(Error::Contract("QP data must be finite".into()));
        }
        let scale = T::one().max(h.amax());
        let tol = T::lit(1e-10) * scale;
        if (&h - h.transpose()).amax() > tol {
            return Err(Error::Contract("QP Hessian is not symmetric".into()));
        }
        if d > 0 {
            let min_eig = h.clone().symmetric_eigenvalues().min();
            if min_eig < -tol {
                return Err(Error::Contract(format!("QP Hessian is not PSD (eigenvalue {min_eig})")));
            }
        }
        Ok(Self { h, c, a, b })
    }

    pub fn dim(&self) -> usize {
        self.c.len()
    }

    pub fn constraint_count(&self) -> usize {
        self.b.len()
    }

    pub fn h(&self) -> &DMatrix<T> {
        &self.h
    }

    pub fn c(&self) -> &DVector<T> {
        &self.c
    }

    pub fn a(&self) -> &DMatrix<T> {
        &self.a
    }

    pub fn b(&self) -> &DVector<T> {
        &self.b
    }

    pub fn objective(&self, z: &DVector<T>) -> T {
        z.dot(&(&self.h * z)) * T::lit(0.5) + self.c.dot(z)
    }

    /// Same problem with the objective multiplied by `factor`.
    pub fn scaled(&self, factor: T) -> Result<Self> {
        if !(factor > T::zero()) {
            return Err(Error::Contract("objective scale must be positive".into()));
        }
        Ok(Self {
            h: &self.h * factor,
            c: &self.c * factor,
            ..self.clone()
        })
    }

    /// Worst violation among stationarity, primal feasibility, dual
    /// feasibility and complementary slackness.
    pub fn kkt_residual(&self, z: &DVector<T>, duals: &DVector<T>) -> T {
        let slack = &self.a * z - &self.b;
        let stationarity = (&self.h * z + &self.c + self.a.tr_mul(duals)).amax();
        let primal = slack.iter().fold(T::zero(), |m, &s| m.max(s));
        let dual = duals.iter().fold(T::zero(), |m, &l| m.max(-l));
        let comp = slack
            .iter()
            .zip(duals.iter())
            .fold(T::zero(), |m, (&s, &l)| m.max((s * l).abs()));
        stationarity.max(primal).max(dual).max(comp)
    }

    /// Text dump of the problem (and optionally a solution) for offline inspection.
    pub fn debug_dump(&self, solution: Option<&QpSolution<T>>) -> String {
        let mut out = String::new();
        let row = |v: &mut String, name: &str, xs: &[T]| {
            let _ = write!(v, "{name}");
            for x in xs {
                let _ = write!(v, " {:?}", x.to_f64_lossy());
            }
            let _ = writeln!(v);
        };
        let _ = writeln!(out, "qp dim {} constraints {}", self.dim(), self.constraint_count());
        for i in 0..self.dim() {
            row(&mut out, "H", self.h.row(i).transpose().as_slice());
        }
        row(&mut out, "c", self.c.as_slice());
        for i in 0..self.constraint_count() {
            let mut xs: Vec<T> = self.a.row(i).iter().copied().collect();
            xs.push(self.b[i]);
            row(&mut out, "A|b", &xs);
        }
        if let Some(sol) = solution {
            let _ = writeln!(out, "status {:?} iterations {}", sol.status, sol.iterations);
            row(&mut out, "z", sol.z.as_slice());
            row(&mut out, "duals", sol.duals.as_slice());
            let _ = writeln!(out, "kkt_residual {:?}", sol.kkt_residual.to_f64_lossy());
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum QpStatus {
    Optimal,
    Infeasible,
    MaxIter,
}

#[derive(Clone, Debug, PartialEq)]
pub struct QpSolution<T: Real> {
    pub z: DVector<T>,
    /// One multiplier per constraint row, zero for inactive rows.
    pub duals: DVector<T>,
    pub status: QpStatus,
    pub kkt_residual: T,
    pub iterations: usize,
    /// Rows in the final working set.
    pub active: Vec<bool>,
    /// For infeasible problems: the row that could not be added.
    pub infeasible_row: Option<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QpOptions<T: Real> {
    pub tol: T,
    pub max_iter: usize,
}

impl<T: Real> Default for QpOptions<T> {
    fn default() -> Self {
        Self {
            tol: T::lit(1e-8),
            max_iter: 500,
        }
    }
}

/// Dual active-set solver (Goldfarb-Idnani). Starts from the unconstrained
/// minimizer and adds violated rows one at a time, dropping rows whose
/// multipliers would turn negative. Ties go to the lowest row index.
#[derive(Clone, Debug, Default)]
pub struct QpSolver<T: Real> {
    pub options: QpOptions<T>,
}

impl<T: Real> QpSolver<T> {
    pub fn new(options: QpOptions<T>) -> Self {
        Self { options }
    }

    pub fn solve(&self, problem: &QpProblem<T>) -> QpSolution<T> {
        active_set::solve(problem, &self.options, &[])
    }

    /// Like [`QpSolver::solve`], but rows in `hint` are tried first when
    /// several rows are violated.
    pub fn solve_warm(&self, problem: &QpProblem<T>, hint: &[usize]) -> QpSolution<T> {
        active_set::solve(problem, &self.options, hint)
    }
}

/// `solve_qp` with explicit tolerance and iteration cap.
pub fn solve_qp<T: Real>(problem: &QpProblem<T>, tol: T, max_iter: usize) -> QpSolution<T> {
    QpSolver::new(QpOptions { tol, max_iter }).solve(problem)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_indefinite_hessian() {
        let h = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert!(QpProblem::new(h, DVector::zeros(2), DMatrix::zeros(0, 2), DVector::zeros(0)).is_err());
    }

    #[test]
    fn rejects_shape_mismatch() {
        let h = DMatrix::<f64>::identity(2, 2);
        assert!(QpProblem::new(h.clone(), DVector::zeros(3), DMatrix::zeros(0, 2), DVector::zeros(0)).is_err());
        assert!(QpProblem::new(h, DVector::zeros(2), DMatrix::zeros(1, 2), DVector::zeros(2)).is_err());
    }

    #[test]
    fn dump_mentions_every_block() {
        let p = QpProblem::new(
            DMatrix::identity(1, 1) * 2.0,
            DVector::zeros(1),
            DMatrix::from_element(1, 1, -1.0),
            DVector::from_element(1, -1.0),
        )
        .unwrap();
        let sol = QpSolver::default().solve(&p);
        let text = p.debug_dump(Some(&sol));
        for key in ["H", "c", "A|b", "status Optimal", "z 1.0", "duals 2.0"] {
            assert!(text.contains(key), "{key} missing from\n{text}");
        }
    }
}
