//! Control Lyapunov function machinery: Lie derivatives, the min-norm
//! margin `σ(x)`, the modified Sontag formula and its level-set scaling `λ(x)`.
//!
//! For a value function `V` with stage cost `q`:
//!
//! ```text
//! σ(x) = √((L_{f0}V)² + q ‖L_{f1}V‖²)
//! v(x) = (L_{f0}V + σ) / ‖L_{f1}V‖²
//! u(x) = -v(x) (L_{f1}V)ᵀ            if ‖L_{f1}V‖ > ε, else 0
//! λ(x) = clamp(2 v(x), λ_min, λ_max) if ‖L_{f1}V‖ > ε, else 1
//! ```

use nalgebra::{DMatrix, DVector};

use crate::dynamics::ControlAffineSystem;
use crate::error::{check_dim, Error, Result};
use crate::qp::{QpProblem, QpSolver, QpStatus};
use crate::scalar::Real;
use crate::valuefn::ValueFunction;

/// Decrease margin used in the CLF inequality.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Margin<T: Real> {
    /// Min-norm margin `σ(x)`.
    Sigma,
    /// Linear class-K margin `α V(x)`.
    ClassK(T),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClfParams<T: Real> {
    /// `‖L_{f1}V‖` at or below this is treated as singular.
    pub gradient_epsilon: T,
    pub lambda_min: T,
    pub lambda_max: T,
}

impl<T: Real> Default for ClfParams<T> {
    fn default() -> Self {
        Self {
            gradient_epsilon: T::lit(1e-8),
            lambda_min: T::lit(1e-3),
            lambda_max: T::lit(1e3),
        }
    }
}

impl<T: Real> ClfParams<T> {
    pub fn validate(&self) -> Result<()> {
        if !(self.gradient_epsilon > T::zero()) {
            return Err(Error::Contract("gradient epsilon must be positive".into()));
        }
        if !(self.lambda_min > T::zero()) || !(self.lambda_min <= self.lambda_max) {
            return Err(Error::Contract(format!(
                "lambda bounds must satisfy 0 < min <= max (got [{}, {}])",
                self.lambda_min, self.lambda_max
            )));
        }
        Ok(())
    }
}

/// Everything the CLF formulas need at one state.
#[derive(Clone, Debug, PartialEq)]
pub struct ClfTerms<T: Real> {
    pub value: T,
    pub lf0: T,
    pub lf1: DVector<T>,
    pub stage_cost: T,
    pub sigma: T,
}

impl<T: Real> ClfTerms<T> {
    pub fn is_singular(&self, params: &ClfParams<T>) -> bool {
        !(self.lf1.norm() > params.gradient_epsilon)
    }

    /// `v(x)`, or `None` on the singular branch.
    pub fn sontag_gain(&self, params: &ClfParams<T>) -> Option<T> {
        if self.is_singular(params) {
            None
        } else {
            Some((self.lf0 + self.sigma) / self.lf1.norm_squared())
        }
    }

    pub fn lambda(&self, params: &ClfParams<T>) -> T {
        match self.sontag_gain(params) {
            Some(v) => (T::lit(2.0) * v).max(params.lambda_min).min(params.lambda_max),
            None => T::one(),
        }
    }

    pub fn margin(&self, margin: Margin<T>) -> T {
        match margin {
            Margin::Sigma => self.sigma,
            Margin::ClassK(alpha) => alpha * self.value,
        }
    }
}

/// A value function paired with the plant it is evaluated on.
#[derive(Clone, Copy)]
pub struct ClfContext<'a, T: Real> {
    provider: &'a dyn ValueFunction<T>,
    system: &'a ControlAffineSystem<T>,
    params: ClfParams<T>,
}

impl<'a, T: Real> ClfContext<'a, T> {
    pub fn new(
        provider: &'a dyn ValueFunction<T>,
        system: &'a ControlAffineSystem<T>,
        params: ClfParams<T>,
    ) -> Result<Self> {
        check_dim("value function vs system state", system.state_dim(), provider.dim())?;
        params.validate()?;
        Ok(Self {
            provider,
            system,
            params,
        })
    }

    pub fn params(&self) -> &ClfParams<T> {
        &self.params
    }

    pub fn system(&self) -> &ControlAffineSystem<T> {
        self.system
    }

    /// `(L_{f0}V, (L_{f1}V)ᵀ)`.
    pub fn lie_derivatives(&self, x: &DVector<T>) -> Result<(T, DVector<T>)> {
        check_dim("CLF state", self.system.state_dim(), x.len())?;
        let grad = self.provider.gradient(x);
        let lf0 = grad.dot(&self.system.drift(x)?);
        let lf1 = self.system.input_matrix(x)?.tr_mul(&grad);
        Ok((lf0, lf1))
    }

    pub fn terms(&self, x: &DVector<T>) -> Result<ClfTerms<T>> {
        let (lf0, lf1) = self.lie_derivatives(x)?;
        let q = self.provider.stage_cost(x);
        if q < T::zero() {
            return Err(Error::Contract(format!("stage cost {q} is negative")));
        }
        let radicand = lf0 * lf0 + q * lf1.norm_squared();
        if radicand < T::zero() || !radicand.is_finite() {
            return Err(Error::Contract(format!("sigma radicand {radicand} is invalid")));
        }
        Ok(ClfTerms {
            value: self.provider.value(x),
            lf0,
            lf1,
            stage_cost: q,
            sigma: radicand.sqrt(),
        })
    }

    pub fn sigma(&self, x: &DVector<T>) -> Result<T> {
        Ok(self.terms(x)?.sigma)
    }

    pub fn sontag_gain(&self, x: &DVector<T>) -> Result<Option<T>> {
        Ok(self.terms(x)?.sontag_gain(&self.params))
    }

    /// Modified Sontag formula.
    pub fn sontag_control(&self, x: &DVector<T>) -> Result<DVector<T>> {
        let terms = self.terms(x)?;
        Ok(match terms.sontag_gain(&self.params) {
            Some(v) => &terms.lf1 * (-v),
            None => DVector::zeros(self.system.input_dim()),
        })
    }

    /// Scalar `λ(x)` relating the gradients of `V` and the optimal value function.
    pub fn lambda_scale(&self, x: &DVector<T>) -> Result<T> {
        Ok(self.terms(x)?.lambda(&self.params))
    }

    /// `L_{f0}V + L_{f1}V u + margin`; nonpositive when the CLF inequality holds.
    pub fn clf_residual(&self, x: &DVector<T>, u: &DVector<T>, margin: Margin<T>) -> Result<T> {
        check_dim("CLF input", self.system.input_dim(), u.len())?;
        let terms = self.terms(x)?;
        Ok(terms.lf0 + terms.lf1.dot(u) + terms.margin(margin))
    }

    /// Pointwise min-norm controller: `min ‖u‖²` s.t. `L_{f0}V + L_{f1}V u ≤ -σ`,
    /// solved as a QP. The constraint is dropped on the singular branch.
    pub fn min_norm_control(&self, x: &DVector<T>, solver: &QpSolver<T>) -> Result<DVector<T>> {
        let terms = self.terms(x)?;
        let m = self.system.input_dim();
        let h = DMatrix::identity(m, m) * T::lit(2.0);
        let (a, b) = if terms.is_singular(&self.params) {
            (DMatrix::zeros(0, m), DVector::zeros(0))
        } else {
            (
                DMatrix::from_row_slice(1, m, terms.lf1.as_slice()),
                DVector::from_element(1, -terms.lf0 - terms.sigma),
            )
        };
        let problem = QpProblem::new(h, DVector::zeros(m), a, b)?;
        let sol = solver.solve(&problem);
        if sol.status != QpStatus::Optimal {
            return Err(Error::Contract(format!(
                "min-norm QP ended with status {:?}",
                sol.status
            )));
        }
        Ok(sol.z)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::valuefn::{GoToGoal, QuadraticCost, QuadraticValue};
    use approx::assert_relative_eq;

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(xs)
    }

    fn riccati_value() -> QuadraticValue<f64> {
        let s3 = 3f64.sqrt();
        QuadraticValue::new(
            DMatrix::from_row_slice(2, 2, &[s3, 1.0, 1.0, s3]),
            QuadraticCost::identity(2),
        )
        .unwrap()
    }

    struct Constant;

    impl ValueFunction<f64> for Constant {
        fn dim(&self) -> usize {
            2
        }
        fn value(&self, _: &DVector<f64>) -> f64 {
            1.0
        }
        fn gradient(&self, _: &DVector<f64>) -> DVector<f64> {
            DVector::zeros(2)
        }
        fn stage_cost(&self, _: &DVector<f64>) -> f64 {
            1.0
        }
        fn goal(&self) -> crate::valuefn::Goal<f64> {
            crate::valuefn::Goal::Set("anywhere".into())
        }
    }

    #[test]
    fn lie_derivatives_on_double_integrator() {
        let sys = ControlAffineSystem::double_integrator();
        let vf = riccati_value();
        let ctx = ClfContext::new(&vf, &sys, ClfParams::default()).unwrap();
        let (lf0, lf1) = ctx.lie_derivatives(&v(&[1.0, 0.0])).unwrap();
        assert_eq!(lf0, 0.0);
        assert_relative_eq!(lf1[0], 2.0, epsilon = 1e-14);
    }

    #[test]
    fn constant_value_function_is_singular() {
        let sys = ControlAffineSystem::double_integrator();
        let ctx = ClfContext::new(&Constant, &sys, ClfParams::default()).unwrap();
        let x = v(&[0.3, -0.4]);
        let (lf0, lf1) = ctx.lie_derivatives(&x).unwrap();
        assert_eq!((lf0, lf1.norm()), (0.0, 0.0));
        assert_eq!(ctx.sigma(&x).unwrap(), 0.0);
        assert_eq!(ctx.sontag_control(&x).unwrap(), v(&[0.0]));
        assert_eq!(ctx.lambda_scale(&x).unwrap(), 1.0);
    }

    #[test]
    fn driftless_lie_derivative_vanishes() {
        let sys = ControlAffineSystem::single_integrator(1, 2).unwrap();
        let vf = GoToGoal::new(v(&[1.0, -1.0]), 2.0).unwrap();
        let ctx = ClfContext::new(&vf, &sys, ClfParams::default()).unwrap();
        let x = v(&[0.2, 0.5]);
        assert_eq!(ctx.lie_derivatives(&x).unwrap().0, 0.0);
        let (_, lf1) = ctx.lie_derivatives(&x).unwrap();
        assert_relative_eq!(
            ctx.sigma(&x).unwrap(),
            vf.stage_cost(&x).sqrt() * lf1.norm(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn sontag_on_riccati_value_is_optimal() {
        let sys = ControlAffineSystem::double_integrator();
        let vf = riccati_value();
        let ctx = ClfContext::new(&vf, &sys, ClfParams::default()).unwrap();
        let x = v(&[1.0, 0.0]);
        assert_relative_eq!(ctx.sigma(&x).unwrap(), 2.0, epsilon = 1e-14);
        assert_relative_eq!(ctx.sontag_gain(&x).unwrap().unwrap(), 0.5, epsilon = 1e-14);
        assert_relative_eq!(ctx.sontag_control(&x).unwrap()[0], -1.0, epsilon = 1e-14);
        assert_relative_eq!(ctx.lambda_scale(&x).unwrap(), 1.0, epsilon = 1e-14);
    }

    #[test]
    fn sontag_on_go_to_goal_is_half_gradient_descent() {
        let sys = ControlAffineSystem::single_integrator(1, 2).unwrap();
        let vf = GoToGoal::new(v(&[0.0, 0.0]), 1.0).unwrap();
        let ctx = ClfContext::new(&vf, &sys, ClfParams::default()).unwrap();
        let x = v(&[3.0, -4.0]);
        assert_relative_eq!(ctx.sontag_control(&x).unwrap(), -x.clone(), epsilon = 1e-12);
    }

    #[test]
    fn lambda_is_clamped() {
        let terms = ClfTerms {
            value: 1.0,
            lf0: 0.0,
            lf1: v(&[1e-3]),
            stage_cost: 1.0,
            sigma: 0.5e0,
        };
        // 2v = 2 * 0.5 / 1e-6 = 1e6
        let params = ClfParams::default();
        assert_eq!(terms.lambda(&params), 1e3);
    }

    #[test]
    fn residuals() {
        let sys = ControlAffineSystem::double_integrator();
        let vf = riccati_value();
        let ctx = ClfContext::new(&vf, &sys, ClfParams::default()).unwrap();
        let x = v(&[1.0, 0.0]);
        let u = ctx.sontag_control(&x).unwrap();
        assert!(ctx.clf_residual(&x, &u, Margin::Sigma).unwrap().abs() < 1e-12);
        assert_relative_eq!(
            ctx.clf_residual(&x, &v(&[0.0]), Margin::Sigma).unwrap(),
            2.0,
            epsilon = 1e-14
        );
        let goal = v(&[0.0, 0.0]);
        assert_eq!(ctx.clf_residual(&goal, &v(&[0.0]), Margin::Sigma).unwrap(), 0.0);
        // class-K margin α V
        let r = ctx.clf_residual(&x, &v(&[0.0]), Margin::ClassK(2.0)).unwrap();
        assert_relative_eq!(r, 2.0 * 3f64.sqrt(), epsilon = 1e-12);
    }

    #[test]
    fn min_norm_qp_matches_sontag() {
        let sys = ControlAffineSystem::double_integrator();
        let vf = riccati_value();
        let ctx = ClfContext::new(&vf, &sys, ClfParams::default()).unwrap();
        let solver = QpSolver::default();
        for x in [v(&[1.0, 0.0]), v(&[-0.3, 1.7]), v(&[0.0, 0.0])] {
            let qp = ctx.min_norm_control(&x, &solver).unwrap();
            let s = ctx.sontag_control(&x).unwrap();
            assert!((qp - s).norm() < 1e-10);
        }
    }

    #[test]
    fn invalid_params_rejected() {
        let sys = ControlAffineSystem::double_integrator();
        let vf = riccati_value();
        let bad = ClfParams {
            lambda_min: 2.0,
            lambda_max: 1.0,
            ..Default::default()
        };
        assert!(ClfContext::new(&vf, &sys, bad).is_err());
        let single = ControlAffineSystem::single_integrator(1, 3).unwrap();
        assert!(ClfContext::new(&vf, &single, ClfParams::default()).is_err());
    }
}
