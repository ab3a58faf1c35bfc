//! Closed-loop execution of a prioritized stack and post-hoc analysis of
//! the resulting traces.

mod analysis;
mod trace_io;

pub use analysis::{
    check_nullspace_convergence, phase_report, Expectation, NullspaceReport, PhaseReport, PhaseThresholds,
    SegmentReport, TaskPhaseStats,
};
pub use trace_io::{read_trace_csv, trace_header, write_trace_csv};

use std::collections::HashSet;
use std::time::Instant;

use nalgebra::DVector;

use crate::dynamics::ControlAffineSystem;
use crate::error::{check_dim, Error, Result};
use crate::qp::{QpOptions, QpSolver, QpStatus};
use crate::scalar::Real;
use crate::stack::{assemble_qp, build_k, PrioritySchedule, StackOptions, TaskSpec};

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ControllerParams<T: Real> {
    pub stack: StackOptions<T>,
    pub qp: QpOptions<T>,
}

#[derive(Clone, Debug)]
pub struct Scenario<T: Real> {
    pub name: String,
    pub system: ControlAffineSystem<T>,
    pub tasks: Vec<TaskSpec<T>>,
    pub schedule: PrioritySchedule<T>,
    pub horizon: T,
    pub dt: T,
    pub x0: DVector<T>,
    pub controller: ControllerParams<T>,
}

impl<T: Real> Scenario<T> {
    pub fn task_ids(&self) -> Vec<String> {
        self.tasks.iter().map(|t| t.id().to_owned()).collect()
    }

    /// Number of integration steps, `round(horizon / dt)`.
    pub fn step_count(&self) -> usize {
        (self.horizon / self.dt).round().to_usize().unwrap_or(0)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.horizon > T::zero()) || !self.horizon.is_finite() {
            return Err(Error::Contract(format!(
                "horizon must be positive, got {}",
                self.horizon
            )));
        }
        if !(self.dt > T::zero()) || !self.dt.is_finite() {
            return Err(Error::Contract(format!("time step must be positive, got {}", self.dt)));
        }
        if self.dt > self.horizon {
            return Err(Error::Contract("time step exceeds the horizon".into()));
        }
        check_dim("initial state", self.system.state_dim(), self.x0.len())?;
        if self.x0.iter().any(|v| !v.is_finite()) {
            return Err(Error::Contract("initial state must be finite".into()));
        }
        if self.tasks.is_empty() {
            return Err(Error::Contract("scenario has no tasks".into()));
        }
        let mut seen = HashSet::new();
        for task in &self.tasks {
            if !seen.insert(task.id()) {
                return Err(Error::Contract(format!("task id `{}` is used twice", task.id())));
            }
            task.validate(self.system.state_dim())?;
        }
        self.schedule.validate_tasks(&self.task_ids())?;
        let end = self.dt * T::from_usize(self.step_count()).unwrap();
        if self.schedule.start() > T::zero() || self.schedule.end() < end {
            return Err(Error::Contract(format!(
                "schedule covers [{}, {}] but the run needs [0, {end}]",
                self.schedule.start(),
                self.schedule.end()
            )));
        }
        if !(self.controller.stack.kappa > T::zero()) {
            return Err(Error::Contract("slack weight must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord<T: Real> {
    pub t: T,
    pub x: DVector<T>,
    pub u: DVector<T>,
    pub values: DVector<T>,
    pub delta: DVector<T>,
    /// Task row residuals, nonpositive when satisfied.
    pub residuals: DVector<T>,
    pub active: Vec<bool>,
    pub dropped: Vec<bool>,
    pub segment: usize,
    pub status: QpStatus,
    pub iterations: usize,
    pub solve_time_s: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimFailure {
    pub step: usize,
    pub time: f64,
    pub reason: String,
    /// Text dump of the failing QP, when there was one.
    pub qp_dump: Option<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimulationTrace<T: Real> {
    pub task_ids: Vec<String>,
    pub state_dim: usize,
    pub input_dim: usize,
    /// One record per time `k·dt`, `k = 0..=steps`; the last record holds
    /// the final state and the input the controller would apply there.
    pub records: Vec<StepRecord<T>>,
    pub failure: Option<SimFailure>,
}

impl<T: Real> SimulationTrace<T> {
    pub fn is_complete(&self) -> bool {
        self.failure.is_none()
    }

    pub fn times(&self) -> Vec<T> {
        self.records.iter().map(|r| r.t).collect()
    }

    /// `J̃ᵢ(t)` over the trace.
    pub fn task_series(&self, task: usize) -> Vec<T> {
        self.records.iter().map(|r| r.values[task]).collect()
    }

    pub fn final_state(&self) -> Option<&DVector<T>> {
        self.records.last().map(|r| &r.x)
    }

    pub fn all_optimal(&self) -> bool {
        self.is_complete() && self.records.iter().all(|r| r.status == QpStatus::Optimal)
    }

    pub fn median_solve_time(&self) -> f64 {
        let mut times: Vec<f64> = self.records.iter().map(|r| r.solve_time_s).collect();
        if times.is_empty() {
            return 0.0;
        }
        times.sort_by(f64::total_cmp);
        times[times.len() / 2]
    }

    /// Equality of everything except wall-clock solve times.
    pub fn same_trajectory(&self, other: &Self) -> bool {
        self.task_ids == other.task_ids
            && self.failure == other.failure
            && self.records.len() == other.records.len()
            && self.records.iter().zip(&other.records).all(|(a, b)| {
                StepRecord {
                    solve_time_s: 0.0,
                    ..a.clone()
                } == StepRecord {
                    solve_time_s: 0.0,
                    ..b.clone()
                }
            })
    }
}

/// Runs the closed loop. Invalid scenarios are errors; numerical failures
/// during the run end it early and are reported in [`SimulationTrace::failure`].
pub fn run<T: Real>(scenario: &Scenario<T>) -> Result<SimulationTrace<T>> {
    scenario.validate()?;
    let ids = scenario.task_ids();
    let sys = &scenario.system;
    let solver = QpSolver::new(scenario.controller.qp);
    let steps = scenario.step_count();
    let mut trace = SimulationTrace {
        task_ids: ids.clone(),
        state_dim: sys.state_dim(),
        input_dim: sys.input_dim(),
        records: Vec::with_capacity(steps + 1),
        failure: None,
    };

    let mut x = scenario.x0.clone();
    let mut cached_k: Option<(usize, _)> = None;
    let mut hint: Vec<usize> = Vec::new();
    for step in 0..=steps {
        let t = scenario.dt * T::from_usize(step).unwrap();
        let fail = |reason: String, qp_dump: Option<String>| SimFailure {
            step,
            time: t.to_f64_lossy(),
            reason,
            qp_dump,
        };
        let segment = scenario.schedule.segment_index_at(t)?;
        if cached_k.as_ref().map(|(s, _)| *s) != Some(segment) {
            cached_k = Some((
                segment,
                build_k(&scenario.schedule.segments()[segment].relations, &ids)?,
            ));
            hint.clear();
        }
        let k = &cached_k.as_ref().expect("set above").1;

        let assembled = match assemble_qp(&scenario.tasks, sys, &x, k, &scenario.controller.stack) {
            Ok(a) => a,
            Err(e) => {
                trace.failure = Some(fail(format!("stack assembly failed: {e}"), None));
                return Ok(trace);
            }
        };
        let started = Instant::now();
        let sol = solver.solve_warm(&assembled.problem, &hint);
        let solve_time_s = started.elapsed().as_secs_f64();
        if sol.status != QpStatus::Optimal {
            log::error!("QP at step {step} (t = {t}) ended with status {:?}", sol.status);
            trace.failure = Some(fail(
                format!("QP status {:?} after {} iterations", sol.status, sol.iterations),
                Some(assembled.problem.debug_dump(Some(&sol))),
            ));
            return Ok(trace);
        }
        hint = (0..sol.active.len()).filter(|&i| sol.active[i]).collect();
        let (u, delta) = assembled.split(&sol.z);
        trace.records.push(StepRecord {
            t,
            x: x.clone(),
            residuals: assembled.task_residuals(&u, &delta),
            u: u.clone(),
            values: assembled.values.clone(),
            delta,
            active: sol.active,
            dropped: assembled.dropped,
            segment,
            status: sol.status,
            iterations: sol.iterations,
            solve_time_s,
        });
        if step == steps {
            break;
        }
        x = match sys.step_rk4(&x, &u, scenario.dt) {
            Ok(next) if next.iter().all(|v| v.is_finite()) => next,
            Ok(_) => {
                trace.failure = Some(fail("state became non-finite".into(), None));
                return Ok(trace);
            }
            Err(e) => {
                trace.failure = Some(fail(format!("integration failed: {e}"), None));
                return Ok(trace);
            }
        };
    }
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::valuefn::{GoToGoal, ValueFunction};

    fn go(goal: &[f64]) -> Arc<dyn ValueFunction<f64>> {
        Arc::new(GoToGoal::new(DVector::from_column_slice(goal), 1.0).unwrap())
    }

    fn single_goal(x0: &[f64], horizon: f64) -> Scenario<f64> {
        Scenario {
            name: "single".into(),
            system: ControlAffineSystem::single_integrator(1, 2).unwrap(),
            tasks: vec![TaskSpec::new("T1", go(&[0.0, 0.0]))],
            schedule: PrioritySchedule::constant(vec![], horizon).unwrap(),
            horizon,
            dt: 0.01,
            x0: DVector::from_column_slice(x0),
            controller: ControllerParams {
                stack: StackOptions {
                    kappa: 1e8,
                    ..Default::default()
                },
                ..Default::default()
            },
        }
    }

    #[test]
    fn go_to_goal_decays_exponentially() {
        let trace = run(&single_goal(&[3.0, 4.0], 2.0)).unwrap();
        assert!(trace.all_optimal());
        assert_eq!(trace.records.len(), 201);
        let j0 = trace.records[0].values[0];
        for r in &trace.records {
            let expected = j0 * (-2.0 * r.t).exp();
            assert!(
                (r.values[0] - expected).abs() <= 0.05 * expected,
                "t={}: {} vs {expected}",
                r.t,
                r.values[0]
            );
        }
    }

    #[test]
    fn state_constant_at_goal() {
        let trace = run(&single_goal(&[0.0, 0.0], 0.5)).unwrap();
        assert!(trace.all_optimal());
        assert!(trace.records.iter().all(|r| r.x.amax() == 0.0 && r.u.amax() == 0.0));
    }

    #[test]
    fn deterministic() {
        let s = single_goal(&[1.0, -2.0], 1.0);
        assert!(run(&s).unwrap().same_trajectory(&run(&s).unwrap()));
    }

    #[test]
    fn invalid_scenarios() {
        let mut s = single_goal(&[1.0, 1.0], 1.0);
        s.dt = 0.0;
        assert!(run(&s).is_err());
        let mut s = single_goal(&[1.0, 1.0], 1.0);
        s.x0 = DVector::zeros(3);
        assert!(run(&s).is_err());
        let mut s = single_goal(&[1.0, 1.0], 1.0);
        s.schedule = PrioritySchedule::constant(vec![], 0.5).unwrap();
        assert!(run(&s).is_err());
        let mut s = single_goal(&[1.0, 1.0], 1.0);
        s.tasks.push(s.tasks[0].clone());
        assert!(run(&s).is_err());
    }
}
