//! Value functions `J̃*` encoding tasks, together with their gradients and
//! the stage costs they were derived from.
//!
//! Three sources are supported: closed-form solutions of the
//! Hamilton-Jacobi-Bellman equation ([`GoToGoal`], [`QuadraticValue`] fed by
//! [`riccati_solve`]), grid value iteration ([`value_iteration`] producing a
//! [`GridValueFunction`]), and the formation-energy surrogate
//! ([`FormationValue`]).

mod analytic;
mod artifact;
mod formation;
mod grid;
mod iteration;
mod riccati;

pub use analytic::{GoToGoal, QuadraticValue};
pub use artifact::{read_grid, write_grid, ARTIFACT_MAGIC};
pub use formation::{formation_energy, formation_energy_gradient, hexagon_vertices, FormationSpec, FormationValue};
pub use grid::{GridAxes, GridValueFunction};
pub use iteration::{value_iteration, GridSpec, IterationOptions, IterationReport};
pub use riccati::{care_residual, riccati_solve};

use nalgebra::{DMatrix, DVector};

use crate::dynamics::ControlAffineSystem;
use crate::error::{check_dim, Error, Result};
use crate::scalar::Real;

/// Where a task's value function vanishes.
#[derive(Clone, Debug, PartialEq)]
pub enum Goal<T: Real> {
    Point(DVector<T>),
    /// A goal set without a single representative point, e.g. a formation shape.
    Set(String),
}

/// A nonnegative value function with gradient and the state part `q(x)` of
/// the running cost it minimizes.
///
/// Arguments are assumed to have length [`ValueFunction::dim`]; callers
/// validate dimensions once when a task is built.
pub trait ValueFunction<T: Real>: Send + Sync {
    fn dim(&self) -> usize;
    fn value(&self, x: &DVector<T>) -> T;
    fn gradient(&self, x: &DVector<T>) -> DVector<T>;
    fn stage_cost(&self, x: &DVector<T>) -> T;
    fn goal(&self) -> Goal<T>;
}

/// Running cost `(x - c)ᵀ Q (x - c) + r uᵀu`.
#[derive(Clone, Debug, PartialEq)]
pub struct QuadraticCost<T: Real> {
    pub state_weight: DMatrix<T>,
    pub center: DVector<T>,
    pub input_weight: T,
}

impl<T: Real> QuadraticCost<T> {
    pub fn new(state_weight: DMatrix<T>, center: DVector<T>, input_weight: T) -> Result<Self> {
        let n = center.len();
        check_dim("cost state weight rows", n, state_weight.nrows())?;
        check_dim("cost state weight columns", n, state_weight.ncols())?;
        Ok(Self {
            state_weight,
            center,
            input_weight,
        })
    }

    /// `xᵀx + uᵀu` around the origin.
    pub fn identity(n: usize) -> Self {
        Self {
            state_weight: DMatrix::identity(n, n),
            center: DVector::zeros(n),
            input_weight: T::one(),
        }
    }

    pub fn zero(n: usize) -> Self {
        Self {
            state_weight: DMatrix::zeros(n, n),
            center: DVector::zeros(n),
            input_weight: T::zero(),
        }
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    pub fn state_cost(&self, x: &DVector<T>) -> T {
        let e = x - &self.center;
        e.dot(&(&self.state_weight * &e))
    }

    pub fn eval(&self, x: &DVector<T>, u: &DVector<T>) -> T {
        self.state_cost(x) + self.input_weight * u.norm_squared()
    }
}

/// `L_{f0}J - ¼ ‖L_{f1}J‖² + q`, zero for exact solutions of the HJB
/// equation with unit input weight.
pub fn hjb_residual<T: Real>(vf: &dyn ValueFunction<T>, sys: &ControlAffineSystem<T>, x: &DVector<T>) -> Result<T> {
    if vf.dim() != sys.state_dim() {
        return Err(Error::Dimension {
            context: "value function vs system state",
            expected: sys.state_dim(),
            got: vf.dim(),
        });
    }
    let grad = vf.gradient(x);
    let lf0 = grad.dot(&sys.drift(x)?);
    let lf1 = sys.input_matrix(x)?.tr_mul(&grad);
    Ok(lf0 - T::lit(0.25) * lf1.norm_squared() + vf.stage_cost(x))
}

/// Central finite-difference gradient with per-axis step `h`.
pub fn finite_difference_gradient<T: Real>(f: impl Fn(&DVector<T>) -> T, x: &DVector<T>, h: T) -> DVector<T> {
    let two = T::lit(2.0);
    DVector::from_fn(x.len(), |i, _| {
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[i] += h;
        xm[i] -= h;
        (f(&xp) - f(&xm)) / (two * h)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_cost_evaluates() {
        let c = QuadraticCost::<f64>::identity(2);
        let x = DVector::from_column_slice(&[1.0, 2.0]);
        let u = DVector::from_column_slice(&[3.0]);
        assert_eq!(c.eval(&x, &u), 14.0);
        assert_eq!(QuadraticCost::<f64>::zero(2).eval(&x, &u), 0.0);
        assert!(QuadraticCost::new(DMatrix::<f64>::zeros(2, 3), DVector::zeros(2), 1.0).is_err());
    }

    #[test]
    fn finite_difference_of_quadratic() {
        let x = DVector::from_column_slice(&[0.5, -1.5]);
        let g = finite_difference_gradient(|y: &DVector<f64>| y[0] * y[0] + 3.0 * y[0] * y[1], &x, 1e-5);
        assert!((g[0] - (1.0 - 4.5)).abs() < 1e-8);
        assert!((g[1] - 1.5).abs() < 1e-8);
    }
}
