//! Control-affine plants `ẋ = f0(x) + f1(x) u`, their forward-Euler
//! discretization and closed-loop integration.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, Error, Result};
use crate::scalar::Real;

pub type VectorField<T> = Arc<dyn Fn(&DVector<T>) -> DVector<T> + Send + Sync>;
pub type MatrixField<T> = Arc<dyn Fn(&DVector<T>) -> DMatrix<T> + Send + Sync>;

/// A control-affine system with `n` states and `m` inputs.
#[derive(Clone)]
pub struct ControlAffineSystem<T: Real> {
    state_dim: usize,
    input_dim: usize,
    drift: VectorField<T>,
    input_matrix: MatrixField<T>,
    label: String,
    driftless: bool,
    linear: Option<(DMatrix<T>, DMatrix<T>)>,
}

impl<T: Real> fmt::Debug for ControlAffineSystem<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ControlAffineSystem")
            .field("label", &self.label)
            .field("state_dim", &self.state_dim)
            .field("input_dim", &self.input_dim)
            .field("driftless", &self.driftless)
            .finish()
    }
}

impl<T: Real> ControlAffineSystem<T> {
    /// Builds a system from arbitrary fields. Output shapes are checked on every evaluation.
    pub fn new(
        label: impl Into<String>,
        state_dim: usize,
        input_dim: usize,
        drift: VectorField<T>,
        input_matrix: MatrixField<T>,
    ) -> Result<Self> {
        if state_dim == 0 || input_dim == 0 {
            return Err(Error::Contract("state and input dimensions must be positive".into()));
        }
        Ok(Self {
            state_dim,
            input_dim,
            drift,
            input_matrix,
            label: label.into(),
            driftless: false,
            linear: None,
        })
    }

    /// Linear time-invariant plant `ẋ = A x + B u`.
    pub fn linear(label: impl Into<String>, a: DMatrix<T>, b: DMatrix<T>) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(Error::Dimension {
                context: "linear system A (square)",
                expected: n,
                got: a.ncols(),
            });
        }
        check_dim("linear system B rows", n, b.nrows())?;
        let m = b.ncols();
        let a_field = a.clone();
        let b_field = b.clone();
        let driftless = a.iter().all(|v| *v == T::zero());
        let mut sys = Self::new(
            label,
            n,
            m,
            Arc::new(move |x: &DVector<T>| &a_field * x),
            Arc::new(move |_: &DVector<T>| b_field.clone()),
        )?;
        sys.driftless = driftless;
        sys.linear = Some((a, b));
        Ok(sys)
    }

    /// `robot_count` independent single integrators `ẋ_i = u_i` in `workspace_dim` dimensions.
    pub fn single_integrator(robot_count: usize, workspace_dim: usize) -> Result<Self> {
        if robot_count == 0 || workspace_dim == 0 {
            return Err(Error::Contract(
                "single integrator needs at least one robot and one workspace dimension".into(),
            ));
        }
        let n = robot_count * workspace_dim;
        Self::linear(
            format!("single_integrator_{robot_count}x{workspace_dim}"),
            DMatrix::zeros(n, n),
            DMatrix::identity(n, n),
        )
    }

    /// Double integrator `ẋ1 = x2, ẋ2 = u`.
    pub fn double_integrator() -> Self {
        let a = DMatrix::from_row_slice(2, 2, &[T::zero(), T::one(), T::zero(), T::zero()]);
        let b = DMatrix::from_row_slice(2, 1, &[T::zero(), T::one()]);
        Self::linear("double_integrator", a, b).expect("static shapes are consistent")
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn is_driftless(&self) -> bool {
        self.driftless
    }

    /// `(A, B)` when the system was built as a linear plant.
    pub fn linear_matrices(&self) -> Option<(&DMatrix<T>, &DMatrix<T>)> {
        self.linear.as_ref().map(|(a, b)| (a, b))
    }

    /// `f0(x)`.
    pub fn drift(&self, x: &DVector<T>) -> Result<DVector<T>> {
        check_dim("drift argument", self.state_dim, x.len())?;
        let f0 = (self.drift)(x);
        check_dim("drift output", self.state_dim, f0.len())?;
        Ok(f0)
    }

    /// `f1(x)`, an `n × m` matrix.
    pub fn input_matrix(&self, x: &DVector<T>) -> Result<DMatrix<T>> {
        check_dim("input matrix argument", self.state_dim, x.len())?;
        let f1 = (self.input_matrix)(x);
        check_dim("input matrix rows", self.state_dim, f1.nrows())?;
        check_dim("input matrix columns", self.input_dim, f1.ncols())?;
        Ok(f1)
    }

    /// `f0(x) + f1(x) u`.
    pub fn vector_field(&self, x: &DVector<T>, u: &DVector<T>) -> Result<DVector<T>> {
        check_dim("input", self.input_dim, u.len())?;
        Ok(self.drift(x)? + self.input_matrix(x)? * u)
    }

    /// One classical Runge-Kutta step with `u` held constant over the step.
    pub fn step_rk4(&self, x: &DVector<T>, u: &DVector<T>, dt: T) -> Result<DVector<T>> {
        if !(dt > T::zero()) {
            return Err(Error::Contract(format!("integration step must be positive, got {dt}")));
        }
        let half = T::lit(0.5);
        let k1 = self.vector_field(x, u)?;
        let k2 = self.vector_field(&(x + &k1 * (dt * half)), u)?;
        let k3 = self.vector_field(&(x + &k2 * (dt * half)), u)?;
        let k4 = self.vector_field(&(x + &k3 * dt), u)?;
        let two = T::lit(2.0);
        Ok(x + (k1 + k2 * two + k3 * two + k4) * (dt / T::lit(6.0)))
    }

    /// Forward-Euler discretization `x⁺ = x + dt (f0(x) + f1(x) u)`.
    pub fn discretize(&self, dt: T) -> Result<DiscreteSystem<T>> {
        if !(dt > T::zero()) {
            return Err(Error::Contract(format!(
                "discretization step must be positive, got {dt}"
            )));
        }
        Ok(DiscreteSystem { base: self.clone(), dt })
    }
}

/// Discrete-time map obtained from a [`ControlAffineSystem`] by forward Euler.
#[derive(Clone, Debug)]
pub struct DiscreteSystem<T: Real> {
    base: ControlAffineSystem<T>,
    dt: T,
}

impl<T: Real> DiscreteSystem<T> {
    pub fn base(&self) -> &ControlAffineSystem<T> {
        &self.base
    }

    pub fn dt(&self) -> T {
        self.dt
    }

    pub fn map(&self, x: &DVector<T>, u: &DVector<T>) -> Result<DVector<T>> {
        Ok(x + self.base.vector_field(x, u)? * self.dt)
    }
}
