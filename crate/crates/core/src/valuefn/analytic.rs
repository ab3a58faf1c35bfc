use nalgebra::{DMatrix, DVector};

use super::{Goal, QuadraticCost, ValueFunction};
use crate::error::{check_dim, Error, Result};
use crate::scalar::Real;

/// Go-to-goal task for a single integrator: running cost `c‖x - x̂‖² + uᵀu`
/// with exact value function `√c ‖x - x̂‖²`.
#[derive(Clone, Debug)]
pub struct GoToGoal<T: Real> {
    goal: DVector<T>,
    weight: T,
}

impl<T: Real> GoToGoal<T> {
    pub fn new(goal: DVector<T>, weight: T) -> Result<Self> {
        if !(weight > T::zero()) {
            return Err(Error::Contract(format!(
                "go-to-goal weight must be positive, got {weight}"
            )));
        }
        Ok(Self { goal, weight })
    }

    pub fn goal_point(&self) -> &DVector<T> {
        &self.goal
    }

    pub fn weight(&self) -> T {
        self.weight
    }
}

impl<T: Real> ValueFunction<T> for GoToGoal<T> {
    fn dim(&self) -> usize {
        self.goal.len()
    }

    fn value(&self, x: &DVector<T>) -> T {
        self.weight.sqrt() * (x - &self.goal).norm_squared()
    }

    fn gradient(&self, x: &DVector<T>) -> DVector<T> {
        (x - &self.goal) * (T::lit(2.0) * self.weight.sqrt())
    }

    fn stage_cost(&self, x: &DVector<T>) -> T {
        self.weight * (x - &self.goal).norm_squared()
    }

    fn goal(&self) -> Goal<T> {
        Goal::Point(self.goal.clone())
    }
}

/// `V(x) = (x - c)ᵀ P (x - c)`; with `P` from [`super::riccati_solve`] this
/// is the optimal value of the linear-quadratic problem.
#[derive(Clone, Debug)]
pub struct QuadraticValue<T: Real> {
    p: DMatrix<T>,
    cost: QuadraticCost<T>,
}

impl<T: Real> QuadraticValue<T> {
    /// `cost` supplies both the center and the stage cost `q`.
    pub fn new(p: DMatrix<T>, cost: QuadraticCost<T>) -> Result<Self> {
        check_dim("quadratic value rows", cost.dim(), p.nrows())?;
        check_dim("quadratic value columns", cost.dim(), p.ncols())?;
        Ok(Self { p, cost })
    }

    pub fn matrix(&self) -> &DMatrix<T> {
        &self.p
    }
}

impl<T: Real> ValueFunction<T> for QuadraticValue<T> {
    fn dim(&self) -> usize {
        self.cost.dim()
    }

    fn value(&self, x: &DVector<T>) -> T {
        let e = x - &self.cost.center;
        e.dot(&(&self.p * &e))
    }

    fn gradient(&self, x: &DVector<T>) -> DVector<T> {
        let e = x - &self.cost.center;
        (&self.p + self.p.transpose()) * e
    }

    fn stage_cost(&self, x: &DVector<T>) -> T {
        self.cost.state_cost(x)
    }

    fn goal(&self) -> Goal<T> {
        Goal::Point(self.cost.center.clone())
    }
}
