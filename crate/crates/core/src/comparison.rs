//! Side-by-side runs of the LQR feedback and two min-norm controllers on a
//! linear plant, and the resolution sweep that tracks how a learned grid
//! value function approaches the Riccati solution.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::clf::{ClfContext, ClfParams};
use crate::config::LearningConfig;
use crate::dynamics::ControlAffineSystem;
use crate::error::{Error, Result};
use crate::qp::{QpOptions, QpSolver};
use crate::scalar::Real;
use crate::valuefn::{riccati_solve, GridValueFunction, QuadraticCost, QuadraticValue, ValueFunction};

/// Linear plant with quadratic cost and its Riccati solution.
#[derive(Clone, Debug)]
pub struct LqrSetup<T: Real> {
    pub system: ControlAffineSystem<T>,
    pub cost: QuadraticCost<T>,
    pub p: DMatrix<T>,
}

impl<T: Real> LqrSetup<T> {
    /// Solves the Riccati equation for a linear `system`. The cost must be
    /// centered at the origin.
    pub fn new(system: ControlAffineSystem<T>, cost: QuadraticCost<T>) -> Result<Self> {
        let (a, b) = system
            .linear_matrices()
            .ok_or_else(|| Error::Contract(format!("system `{}` is not linear", system.label())))?;
        if cost.center.iter().any(|c| *c != T::zero()) {
            return Err(Error::Contract(
                "the LQR comparison needs a cost centered at the origin".into(),
            ));
        }
        let r = DMatrix::identity(b.ncols(), b.ncols()) * cost.input_weight;
        let p = riccati_solve(a, b, &cost.state_weight, &r)?;
        Ok(Self { system, cost, p })
    }

    /// Double integrator with `q = xᵀx`, `r = 1`.
    pub fn double_integrator() -> Result<Self> {
        Self::new(ControlAffineSystem::double_integrator(), QuadraticCost::identity(2))
    }

    /// `u* = -r⁻¹ Bᵀ P x`.
    pub fn optimal_control(&self, x: &DVector<T>) -> DVector<T> {
        let (_, b) = self.system.linear_matrices().expect("checked in new");
        -(b.transpose() * (&self.p * x)) / self.cost.input_weight
    }

    pub fn quadratic_value(&self) -> QuadraticValue<T> {
        QuadraticValue::new(self.p.clone(), self.cost.clone()).expect("shapes checked in new")
    }
}

/// A feedback law compared in [`compare_controllers`].
#[derive(Clone)]
pub enum Controller<T: Real> {
    Optimal,
    /// Pointwise min-norm controller built on the given value function.
    MinNorm(Arc<dyn ValueFunction<T>>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ControllerRun<T: Real> {
    pub name: String,
    pub times: Vec<T>,
    pub states: Vec<DVector<T>>,
    pub inputs: Vec<DVector<T>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PairDeviation<T: Real> {
    pub first: String,
    pub second: String,
    /// `max_t ‖u_first(t) - u_second(t)‖_∞` over the counted samples.
    pub max_deviation: T,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ComparisonReport<T: Real> {
    pub runs: Vec<ControllerRun<T>>,
    pub pairs: Vec<PairDeviation<T>>,
}

impl<T: Real> ComparisonReport<T> {
    pub fn deviation(&self, first: &str, second: &str) -> Option<T> {
        self.pairs
            .iter()
            .find(|p| (p.first == first && p.second == second) || (p.first == second && p.second == first))
            .map(|p| p.max_deviation)
    }
}

/// Simulates one controller from `x0` with zero-order hold and RK4.
pub fn simulate_controller<T: Real>(
    setup: &LqrSetup<T>,
    name: &str,
    controller: &Controller<T>,
    x0: &DVector<T>,
    dt: T,
    steps: usize,
) -> Result<ControllerRun<T>> {
    let solver = QpSolver::new(QpOptions::default());
    let sys = &setup.system;
    let ctx = match controller {
        Controller::MinNorm(vf) => Some(ClfContext::new(vf.as_ref(), sys, ClfParams::default())?),
        Controller::Optimal => None,
    };
    let mut run = ControllerRun {
        name: name.to_owned(),
        times: Vec::with_capacity(steps + 1),
        states: Vec::with_capacity(steps + 1),
        inputs: Vec::with_capacity(steps + 1),
    };
    let mut x = x0.clone();
    for k in 0..=steps {
        let u = match &ctx {
            Some(ctx) => ctx.min_norm_control(&x, &solver)?,
            None => setup.optimal_control(&x),
        };
        run.times.push(dt * T::from_usize(k).unwrap());
        run.states.push(x.clone());
        if k < steps {
            x = sys.step_rk4(&x, &u, dt)?;
        }
        run.inputs.push(u);
    }
    Ok(run)
}

/// Largest input difference between two runs of equal length, counting only
/// samples where both states lie farther than `exclusion_radius` from the origin.
pub fn max_input_deviation<T: Real>(a: &ControllerRun<T>, b: &ControllerRun<T>, exclusion_radius: T) -> T {
    a.states
        .iter()
        .zip(&b.states)
        .zip(a.inputs.iter().zip(&b.inputs))
        .filter(|((xa, xb), _)| xa.norm() > exclusion_radius && xb.norm() > exclusion_radius)
        .map(|(_, (ua, ub))| (ua - ub).amax())
        .fold(T::zero(), |m, d| m.max(d))
}

/// Runs (a) the LQR feedback, (b) the min-norm controller on `xᵀPx` and,
/// when a grid is given, (c) the min-norm controller on the grid value.
/// Pairs involving the grid skip samples inside its termination ball.
pub fn compare_controllers<T: Real>(
    setup: &LqrSetup<T>,
    grid: Option<&GridValueFunction<T>>,
    x0: &DVector<T>,
    dt: T,
    horizon: T,
) -> Result<ComparisonReport<T>> {
    if !(dt > T::zero()) || !(horizon >= dt) {
        return Err(Error::Contract("comparison needs 0 < dt <= horizon".into()));
    }
    let steps = (horizon / dt).round().to_usize().unwrap_or(0);
    let mut controllers = vec![
        ("optimal", Controller::Optimal),
        (
            "min_norm_riccati",
            Controller::MinNorm(Arc::new(setup.quadratic_value())),
        ),
    ];
    if let Some(g) = grid {
        controllers.push(("min_norm_grid", Controller::MinNorm(Arc::new(g.clone()))));
    }
    let runs = controllers
        .iter()
        .map(|(name, c)| simulate_controller(setup, name, c, x0, dt, steps))
        .collect::<Result<Vec<_>>>()?;
    let radius = grid.map_or(T::zero(), |g| g.termination_radius());
    let mut pairs = Vec::new();
    for i in 0..runs.len() {
        for j in i + 1..runs.len() {
            let excl = if runs[i].name == "min_norm_grid" || runs[j].name == "min_norm_grid" {
                radius
            } else {
                T::zero()
            };
            pairs.push(PairDeviation {
                first: runs[i].name.clone(),
                second: runs[j].name.clone(),
                max_deviation: max_input_deviation(&runs[i], &runs[j], excl),
            });
        }
    }
    Ok(ComparisonReport { runs, pairs })
}

/// Median of `|J̃(x) - xᵀPx| / xᵀPx` over lattice points (`points_per_axis`
/// per axis on `[-r_max, r_max]ⁿ`) with `r_min ≤ ‖x‖ ≤ r_max`.
pub fn median_relative_value_error<T: Real>(
    vf: &dyn ValueFunction<T>,
    p: &DMatrix<T>,
    r_min: T,
    r_max: T,
    points_per_axis: usize,
) -> T {
    let n = p.nrows();
    let total = points_per_axis.pow(n as u32);
    let denom = T::from_usize(points_per_axis.max(2) - 1).unwrap();
    let mut errors = Vec::new();
    for flat in 0..total {
        let mut rem = flat;
        let x = DVector::from_fn(n, |_, _| {
            let i = rem % points_per_axis;
            rem /= points_per_axis;
            -r_max + T::lit(2.0) * r_max * T::from_usize(i).unwrap() / denom
        });
        let norm = x.norm();
        if norm < r_min || norm > r_max {
            continue;
        }
        let exact = x.dot(&(p * &x));
        errors.push(((vf.value(&x) - exact) / exact).abs());
    }
    if errors.is_empty() {
        return T::zero();
    }
    errors.sort_by(|a, b| a.partial_cmp(b).expect("finite errors"));
    errors[errors.len() / 2]
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepEntry {
    pub resolution: Vec<usize>,
    pub sweeps: usize,
    pub residual: f64,
    pub median_value_error: f64,
    /// Grid min-norm controller vs the LQR feedback.
    pub control_deviation: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepReport {
    pub entries: Vec<SweepEntry>,
}

impl SweepReport {
    /// Control deviation strictly decreases with each finer grid.
    pub fn deviation_monotone(&self) -> bool {
        self.entries
            .windows(2)
            .all(|w| w[1].control_deviation < w[0].control_deviation)
    }
}

/// Learns the grid value at each resolution and compares it with the
/// Riccati solution, both in value and in closed-loop control.
pub fn resolution_sweep(
    setup: &LqrSetup<f64>,
    learning: &LearningConfig,
    resolutions: &[Vec<usize>],
    x0: &DVector<f64>,
    dt: f64,
    horizon: f64,
) -> Result<SweepReport> {
    let mut entries = Vec::with_capacity(resolutions.len());
    for res in resolutions {
        let (gvf, report) = learning.with_resolution(res.clone()).learn(&setup.system)?;
        let cmp = compare_controllers(setup, Some(&gvf), x0, dt, horizon)?;
        let entry = SweepEntry {
            resolution: res.clone(),
            sweeps: report.sweeps,
            residual: report.residual,
            median_value_error: median_relative_value_error(&gvf, &setup.p, 0.3, 1.5, 61),
            control_deviation: cmp.deviation("optimal", "min_norm_grid").unwrap_or(f64::NAN),
        };
        log::info!(
            "resolution {:?}: {} sweeps, median value error {:.4}, control deviation {:.4}",
            entry.resolution,
            entry.sweeps,
            entry.median_value_error,
            entry.control_deviation
        );
        entries.push(entry);
    }
    Ok(SweepReport { entries })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn riccati_matrix_of_the_double_integrator() {
        let s = LqrSetup::<f64>::double_integrator().unwrap();
        let r3 = 3f64.sqrt();
        assert!((&s.p - DMatrix::from_row_slice(2, 2, &[r3, 1.0, 1.0, r3])).amax() < 1e-9);
        let u = s.optimal_control(&DVector::from_vec(vec![1.0, 0.0]));
        assert!((u[0] + 1.0).abs() < 1e-9);
    }

    #[test]
    fn optimal_and_min_norm_coincide() {
        let s = LqrSetup::<f64>::double_integrator().unwrap();
        let rep = compare_controllers(&s, None, &DVector::from_vec(vec![1.0, 1.0]), 0.01, 5.0).unwrap();
        assert_eq!(rep.runs.len(), 2);
        assert!(rep.deviation("optimal", "min_norm_riccati").unwrap() <= 1e-6);
    }

    #[test]
    fn origin_stays_put() {
        let s = LqrSetup::<f64>::double_integrator().unwrap();
        let rep = compare_controllers(&s, None, &DVector::zeros(2), 0.01, 1.0).unwrap();
        for run in &rep.runs {
            assert!(run.states.iter().chain(&run.inputs).all(|v| v.amax() < 1e-12));
        }
    }

    #[test]
    fn exact_value_has_zero_error() {
        let s = LqrSetup::<f64>::double_integrator().unwrap();
        assert!(median_relative_value_error(&s.quadratic_value(), &s.p, 0.3, 1.5, 31) < 1e-12);
    }

    #[test]
    fn nonlinear_system_is_rejected() {
        let sys = ControlAffineSystem::<f64>::new(
            "pendulum",
            1,
            1,
            Arc::new(|x: &DVector<f64>| x.map(f64::sin)),
            Arc::new(|_: &DVector<f64>| DMatrix::identity(1, 1)),
        )
        .unwrap();
        assert!(LqrSetup::new(sys, QuadraticCost::identity(1)).is_err());
    }
}
