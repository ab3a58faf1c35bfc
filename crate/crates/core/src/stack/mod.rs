//! Prioritized task stacks: tasks, priority relations, schedules and the
//! per-state QP in `z = (u, δ)`.

mod assemble;
mod priority;

pub use assemble::{assemble_qp, AssembledQp, StackOptions};
pub use priority::{
    build_k, schedule_at, PrioritizationMatrix, PriorityRelation, PrioritySchedule, ScheduleSegment,
    DEFAULT_PRIORITY_SCALE,
};

use std::fmt;
use std::sync::Arc;

use nalgebra::DVector;

use crate::clf::ClfParams;
use crate::error::{check_dim, Error, Result};
use crate::scalar::Real;
use crate::valuefn::{Goal, ValueFunction};

/// Contiguous slice `[robot·size, (robot+1)·size)` of the ensemble state.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RobotBlock {
    pub robot: usize,
    pub size: usize,
}

impl RobotBlock {
    pub fn offset(&self) -> usize {
        self.robot * self.size
    }
}

/// A task in the stack: a value function over either the whole ensemble
/// or one robot's block of it.
#[derive(Clone)]
pub struct TaskSpec<T: Real> {
    id: String,
    provider: Arc<dyn ValueFunction<T>>,
    robot_block: Option<RobotBlock>,
    params: ClfParams<T>,
}

impl<T: Real> fmt::Debug for TaskSpec<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TaskSpec")
            .field("id", &self.id)
            .field("dim", &self.provider.dim())
            .field("robot_block", &self.robot_block)
            .finish()
    }
}

impl<T: Real> TaskSpec<T> {
    /// Task over the whole ensemble state.
    pub fn new(id: impl Into<String>, provider: Arc<dyn ValueFunction<T>>) -> Self {
        Self {
            id: id.into(),
            provider,
            robot_block: None,
            params: ClfParams::default(),
        }
    }

    /// Task acting on one robot; the provider's dimension is the block size.
    pub fn for_robot(id: impl Into<String>, provider: Arc<dyn ValueFunction<T>>, robot: usize) -> Self {
        let size = provider.dim();
        Self {
            robot_block: Some(RobotBlock { robot, size }),
            ..Self::new(id, provider)
        }
    }

    pub fn with_params(mut self, params: ClfParams<T>) -> Self {
        self.params = params;
        self
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn provider(&self) -> &Arc<dyn ValueFunction<T>> {
        &self.provider
    }

    pub fn robot_block(&self) -> Option<RobotBlock> {
        self.robot_block
    }

    pub fn params(&self) -> &ClfParams<T> {
        &self.params
    }

    /// Checks the task fits an ensemble of dimension `ensemble_dim`.
    pub fn validate(&self, ensemble_dim: usize) -> Result<()> {
        self.params.validate()?;
        match self.robot_block {
            None => check_dim("task dimension vs ensemble", ensemble_dim, self.provider.dim()),
            Some(b) => {
                check_dim("robot block size", b.size, self.provider.dim())?;
                if b.size == 0 || b.offset() + b.size > ensemble_dim {
                    return Err(Error::Contract(format!(
                        "task `{}`: robot {} with block size {} does not fit a state of dimension {ensemble_dim}",
                        self.id, b.robot, b.size
                    )));
                }
                Ok(())
            }
        }
    }

    fn local(&self, x: &DVector<T>) -> DVector<T> {
        match self.robot_block {
            None => x.clone(),
            Some(b) => x.rows(b.offset(), b.size).into_owned(),
        }
    }

    /// View of the task as a value function on the ensemble state.
    pub fn ensemble_view(&self, ensemble_dim: usize) -> Result<EnsembleTask<'_, T>> {
        self.validate(ensemble_dim)?;
        Ok(EnsembleTask {
            task: self,
            dim: ensemble_dim,
        })
    }
}

/// Lifts a per-robot gradient into the ensemble: zeros everywhere except the
/// robot's block. Ensemble tasks pass through unchanged.
pub fn embed_gradient<T: Real>(task: &TaskSpec<T>, ensemble_dim: usize, local: &DVector<T>) -> Result<DVector<T>> {
    match task.robot_block {
        None => {
            check_dim("ensemble gradient", ensemble_dim, local.len())?;
            Ok(local.clone())
        }
        Some(b) => {
            check_dim("local gradient", b.size, local.len())?;
            if b.offset() + b.size > ensemble_dim {
                return Err(Error::Contract(format!(
                    "robot block {}..{} exceeds ensemble dimension {ensemble_dim}",
                    b.offset(),
                    b.offset() + b.size
                )));
            }
            let mut g = DVector::zeros(ensemble_dim);
            g.rows_mut(b.offset(), b.size).copy_from(local);
            Ok(g)
        }
    }
}

/// A validated [`TaskSpec`] seen as a value function of the ensemble state.
#[derive(Clone, Copy)]
pub struct EnsembleTask<'a, T: Real> {
    task: &'a TaskSpec<T>,
    dim: usize,
}

impl<T: Real> ValueFunction<T> for EnsembleTask<'_, T> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn value(&self, x: &DVector<T>) -> T {
        self.task.provider.value(&self.task.local(x))
    }

    fn gradient(&self, x: &DVector<T>) -> DVector<T> {
        let local = self.task.provider.gradient(&self.task.local(x));
        embed_gradient(self.task, self.dim, &local).expect("task validated against ensemble dimension")
    }

    fn stage_cost(&self, x: &DVector<T>) -> T {
        self.task.provider.stage_cost(&self.task.local(x))
    }

    fn goal(&self) -> Goal<T> {
        match (self.task.robot_block, self.task.provider.goal()) {
            (None, goal) => goal,
            (Some(_), _) => Goal::Set(self.task.id.clone()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::valuefn::GoToGoal;

    fn go(goal: &[f64]) -> Arc<dyn ValueFunction<f64>> {
        Arc::new(GoToGoal::new(DVector::from_column_slice(goal), 1.0).unwrap())
    }

    #[test]
    fn embeds_into_robot_block() {
        let task = TaskSpec::for_robot("T2", go(&[0.0, 0.0]), 0);
        let g = embed_gradient(&task, 12, &DVector::from_vec(vec![6.0, 8.0])).unwrap();
        let mut expected = DVector::zeros(12);
        expected[0] = 6.0;
        expected[1] = 8.0;
        assert_eq!(g, expected);

        let zero = embed_gradient(&task, 12, &DVector::zeros(2)).unwrap();
        assert_eq!(zero, DVector::zeros(12));
    }

    #[test]
    fn ensemble_task_passes_through() {
        let task = TaskSpec::new("T", go(&[0.0; 4]));
        let local = DVector::from_vec(vec![1.0, 2.0, 3.0, 4.0]);
        assert_eq!(embed_gradient(&task, 4, &local).unwrap(), local);
    }

    #[test]
    fn block_out_of_range() {
        let task = TaskSpec::for_robot("T", go(&[0.0, 0.0]), 6);
        assert!(task.validate(12).is_err());
        assert!(embed_gradient(&task, 12, &DVector::zeros(2)).is_err());
        assert!(TaskSpec::for_robot("T", go(&[0.0, 0.0]), 5).validate(12).is_ok());
    }

    #[test]
    fn ensemble_view_reads_the_block() {
        let task = TaskSpec::for_robot("T", go(&[1.0, 1.0]), 1);
        let view = task.ensemble_view(4).unwrap();
        let x = DVector::from_vec(vec![9.0, 9.0, 4.0, 5.0]);
        assert_eq!(view.value(&x), 25.0);
        assert_eq!(view.gradient(&x), DVector::from_vec(vec![0.0, 0.0, 6.0, 8.0]));
    }
}
