use nalgebra::{DMatrix, DVector};

use super::{PrioritizationMatrix, TaskSpec};
use crate::clf::{ClfContext, Margin};
use crate::dynamics::ControlAffineSystem;
use crate::error::{check_dim, Error, Result};
use crate::qp::QpProblem;
use crate::scalar::Real;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StackOptions<T: Real> {
    /// Weight `κ` of `‖δ‖²` in the objective.
    pub kappa: T,
    pub margin: Margin<T>,
}

impl<T: Real> Default for StackOptions<T> {
    fn default() -> Self {
        Self {
            kappa: T::lit(10.0),
            margin: Margin::Sigma,
        }
    }
}

/// The stack QP at one state, with the per-task terms it was built from.
///
/// Variables are `z = (u, δ)` with one slack per task. Rows are the task
/// rows of the retained tasks in task order, then one row per priority
/// relation.
#[derive(Clone, Debug)]
pub struct AssembledQp<T: Real> {
    pub problem: QpProblem<T>,
    pub input_dim: usize,
    /// `J̃ᵢ(x)`.
    pub values: DVector<T>,
    /// `L_{f0}J̃ᵢ / λᵢ` (zero for dropped tasks).
    pub f0hat: DVector<T>,
    /// Rows `L_{f1}J̃ᵢ / λᵢ` (zero for dropped tasks).
    pub f1hat: DMatrix<T>,
    /// Decrease margin per task (`σᵢ` or `αJ̃ᵢ`).
    pub margins: DVector<T>,
    pub lambdas: DVector<T>,
    /// Tasks whose input gradient vanished; their rows are left out.
    pub dropped: Vec<bool>,
    /// QP row of each retained task.
    pub task_rows: Vec<Option<usize>>,
}

impl<T: Real> AssembledQp<T> {
    pub fn task_count(&self) -> usize {
        self.values.len()
    }

    pub fn split(&self, z: &DVector<T>) -> (DVector<T>, DVector<T>) {
        let m = self.input_dim;
        (z.rows(0, m).into_owned(), z.rows(m, z.len() - m).into_owned())
    }

    /// `f̂0ᵢ + f̂1ᵢu + marginᵢ − δᵢ` per task; nonpositive when the row holds.
    /// Dropped tasks report zero.
    pub fn task_residuals(&self, u: &DVector<T>, delta: &DVector<T>) -> DVector<T> {
        let mut r = &self.f0hat + &self.f1hat * u + &self.margins - delta;
        for (i, &d) in self.dropped.iter().enumerate() {
            if d {
                r[i] = T::zero();
            }
        }
        r
    }
}

pub fn assemble_qp<T: Real>(
    tasks: &[TaskSpec<T>],
    sys: &ControlAffineSystem<T>,
    x: &DVector<T>,
    k: &PrioritizationMatrix<T>,
    options: &StackOptions<T>,
) -> Result<AssembledQp<T>> {
    if tasks.is_empty() {
        return Err(Error::Contract("a stack needs at least one task".into()));
    }
    if !(options.kappa > T::zero()) {
        return Err(Error::Contract(format!(
            "slack weight must be positive, got {}",
            options.kappa
        )));
    }
    let n = sys.state_dim();
    let m = sys.input_dim();
    let big_m = tasks.len();
    check_dim("stack state", n, x.len())?;
    check_dim("prioritization matrix columns", big_m, k.task_count())?;

    let mut values = DVector::zeros(big_m);
    let mut f0hat = DVector::zeros(big_m);
    let mut f1hat = DMatrix::zeros(big_m, m);
    let mut margins = DVector::zeros(big_m);
    let mut lambdas = DVector::from_element(big_m, T::one());
    let mut dropped = vec![false; big_m];
    for (i, task) in tasks.iter().enumerate() {
        let view = task.ensemble_view(n)?;
        let ctx = ClfContext::new(&view, sys, *task.params())?;
        let terms = ctx.terms(x)?;
        values[i] = terms.value;
        margins[i] = terms.margin(options.margin);
        if terms.is_singular(task.params()) {
            log::debug!("task `{}` has a vanishing input gradient; dropping its row", task.id());
            dropped[i] = true;
            continue;
        }
        let lambda = match options.margin {
            Margin::Sigma => terms.lambda(task.params()),
            Margin::ClassK(_) => T::one(),
        };
        lambdas[i] = lambda;
        f0hat[i] = terms.lf0 / lambda;
        f1hat.row_mut(i).copy_from(&(terms.lf1.transpose() / lambda));
    }
    if dropped.iter().all(|&d| d) {
        log::warn!("every task in the stack is singular at this state; the QP is unconstrained");
    }

    let d = m + big_m;
    let mut h = DMatrix::zeros(d, d);
    for i in 0..m {
        h[(i, i)] = T::lit(2.0);
    }
    for i in m..d {
        h[(i, i)] = T::lit(2.0) * options.kappa;
    }
    let retained = dropped.iter().filter(|&&x| !x).count();
    let rows = retained + k.row_count();
    let mut a = DMatrix::zeros(rows, d);
    let mut b = DVector::zeros(rows);
    let mut task_rows = vec![None; big_m];
    let mut row = 0;
    for i in 0..big_m {
        if dropped[i] {
            continue;
        }
        a.view_mut((row, 0), (1, m)).copy_from(&f1hat.row(i));
        a[(row, m + i)] = -T::one();
        b[row] = -margins[i] - f0hat[i];
        task_rows[i] = Some(row);
        row += 1;
    }
    a.view_mut((row, m), (k.row_count(), big_m)).copy_from(&(-k.matrix()));

    Ok(AssembledQp {
        problem: QpProblem::new(h, DVector::zeros(d), a, b)?,
        input_dim: m,
        values,
        f0hat,
        f1hat,
        margins,
        lambdas,
        dropped,
        task_rows,
    })
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::clf::ClfParams;
    use crate::qp::{QpSolver, QpStatus};
    use crate::stack::{build_k, PriorityRelation};
    use crate::valuefn::{FormationSpec, FormationValue, GoToGoal, ValueFunction};
    use approx::assert_relative_eq;

    fn go(goal: &[f64]) -> Arc<dyn ValueFunction<f64>> {
        Arc::new(GoToGoal::new(DVector::from_column_slice(goal), 1.0).unwrap())
    }

    #[test]
    fn large_kappa_recovers_sontag() {
        let sys = ControlAffineSystem::single_integrator(1, 2).unwrap();
        let task = TaskSpec::new("T1", go(&[1.0, -1.0]));
        let x = DVector::from_vec(vec![3.0, 4.0]);
        let opts = StackOptions {
            kappa: 1e12,
            ..Default::default()
        };
        let qp = assemble_qp(
            std::slice::from_ref(&task),
            &sys,
            &x,
            &PrioritizationMatrix::empty(1),
            &opts,
        )
        .unwrap();
        let sol = QpSolver::default().solve(&qp.problem);
        assert_eq!(sol.status, QpStatus::Optimal);
        let (u, _) = qp.split(&sol.z);
        let view = task.ensemble_view(2).unwrap();
        let sontag = ClfContext::new(&view, &sys, ClfParams::default())
            .unwrap()
            .sontag_control(&x)
            .unwrap();
        assert_relative_eq!(u, sontag, epsilon = 1e-6);
    }

    fn hex_stack() -> (Vec<TaskSpec<f64>>, ControlAffineSystem<f64>, DVector<f64>) {
        let formation = FormationValue::new(FormationSpec::hexagon(1.0), 0.01, 0.01).unwrap();
        let tasks = vec![
            TaskSpec::new("T1", Arc::new(formation)),
            TaskSpec::for_robot("T2", go(&[2.5, 0.5]), 0),
            TaskSpec::for_robot("T3", go(&[-2.5, 1.0]), 1),
            TaskSpec::for_robot("T4", go(&[0.0, -2.5]), 2),
        ];
        let sys = ControlAffineSystem::single_integrator(6, 2).unwrap();
        let x = DVector::from_fn(12, |i, _| {
            let angle = (i / 2) as f64 * std::f64::consts::FRAC_PI_3;
            1.5 * if i % 2 == 0 { angle.cos() } else { angle.sin() }
        });
        (tasks, sys, x)
    }

    #[test]
    fn first_phase_structure() {
        let (tasks, sys, x) = hex_stack();
        let order: Vec<String> = tasks.iter().map(|t| t.id().to_owned()).collect();
        let rels: Vec<_> = ["T2", "T3", "T4"]
            .iter()
            .map(|h| PriorityRelation::with_default_scale(*h, "T1").unwrap())
            .collect();
        let k = build_k(&rels, &order).unwrap();
        let qp = assemble_qp(&tasks, &sys, &x, &k, &StackOptions::default()).unwrap();
        assert_eq!(qp.problem.dim(), 16);
        assert_eq!(qp.problem.constraint_count(), 7);
        assert_eq!(qp.task_rows, vec![Some(0), Some(1), Some(2), Some(3)]);
        let sol = QpSolver::default().solve(&qp.problem);
        assert_eq!(sol.status, QpStatus::Optimal);
        let (u, delta) = qp.split(&sol.z);
        assert!(qp.task_residuals(&u, &delta).max() <= 1e-8);
        assert!((k.matrix() * &delta).min() >= -1e-8);
    }

    #[test]
    fn all_tasks_at_goal_give_zero() {
        let sys = ControlAffineSystem::single_integrator(2, 2).unwrap();
        let tasks = vec![
            TaskSpec::for_robot("A", go(&[1.0, 2.0]), 0),
            TaskSpec::for_robot("B", go(&[-1.0, 0.0]), 1),
        ];
        let order = vec!["A".to_owned(), "B".to_owned()];
        let k = build_k(&[PriorityRelation::with_default_scale("A", "B").unwrap()], &order).unwrap();
        let x = DVector::from_vec(vec![1.0, 2.0, -1.0, 0.0]);
        let qp = assemble_qp(&tasks, &sys, &x, &k, &StackOptions::default()).unwrap();
        assert_eq!(qp.dropped, vec![true, true]);
        let sol = QpSolver::default().solve(&qp.problem);
        assert_eq!(sol.status, QpStatus::Optimal);
        assert!(sol.z.amax() < 1e-12);
    }

    #[test]
    fn dropping_a_task_keeps_other_rows() {
        let (tasks, sys, x) = hex_stack();
        let full = assemble_qp(
            &tasks,
            &sys,
            &x,
            &PrioritizationMatrix::empty(4),
            &StackOptions::default(),
        )
        .unwrap();
        let fewer = assemble_qp(
            &tasks[..3],
            &sys,
            &x,
            &PrioritizationMatrix::empty(3),
            &StackOptions::default(),
        )
        .unwrap();
        for row in 0..3 {
            assert_eq!(
                full.problem.a().row(row).columns(0, 12),
                fewer.problem.a().row(row).columns(0, 12)
            );
            assert_eq!(full.problem.b()[row], fewer.problem.b()[row]);
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let (tasks, sys, x) = hex_stack();
        let k = PrioritizationMatrix::empty(4);
        assert!(assemble_qp(&[], &sys, &x, &PrioritizationMatrix::empty(0), &StackOptions::default()).is_err());
        assert!(assemble_qp(
            &tasks,
            &sys,
            &x,
            &PrioritizationMatrix::empty(3),
            &StackOptions::default()
        )
        .is_err());
        let bad = StackOptions {
            kappa: 0.0,
            ..Default::default()
        };
        assert!(assemble_qp(&tasks, &sys, &x, &k, &bad).is_err());
    }
}
