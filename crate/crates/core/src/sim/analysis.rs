use nalgebra::DVector;

use super::SimulationTrace;
use crate::scalar::Real;
use crate::stack::{PrioritizationMatrix, PrioritySchedule};

#[derive(Clone, Debug, PartialEq)]
pub struct NullspaceReport<T: Real> {
    pub times: Vec<T>,
    /// `‖K J̃(t)‖` at each analyzed record.
    pub norms: Vec<T>,
    pub initial: T,
    pub last: T,
    /// `last / initial`, or zero when both vanish.
    pub ratio: T,
    /// `last ≤ tol·(1 + initial)`.
    pub converged: bool,
}

/// Tracks `‖K J̃(t)‖` over records with `t` in `[start, end]`. `K` should be
/// the matrix in force over that window.
pub fn check_nullspace_convergence<T: Real>(
    trace: &SimulationTrace<T>,
    k: &PrioritizationMatrix<T>,
    window: Option<(T, T)>,
    tol: T,
) -> NullspaceReport<T> {
    let mut times = Vec::new();
    let mut norms = Vec::new();
    for r in &trace.records {
        if let Some((a, b)) = window {
            if r.t < a || r.t > b {
                continue;
            }
        }
        times.push(r.t);
        norms.push(if k.row_count() == 0 {
            T::zero()
        } else {
            (k.matrix() * &r.values).norm()
        });
    }
    let initial = norms.first().copied().unwrap_or_else(T::zero);
    let last = norms.last().copied().unwrap_or_else(T::zero);
    let ratio = if initial > T::zero() { last / initial } else { T::zero() };
    NullspaceReport {
        converged: last <= tol * (T::one() + initial),
        times,
        norms,
        initial,
        last,
        ratio,
    }
}

/// What a segment should do to one task's value.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Expectation {
    /// Ends at or below the threshold.
    Converges,
    /// Ends above its segment-start value.
    Grows,
    /// Stays above `persist_factor ×` threshold over the segment's tail.
    Persists,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PhaseThresholds<T: Real> {
    /// Threshold = `fraction × max(value at segment start, value at t = 0)`.
    pub fraction: T,
    pub persist_factor: T,
    /// Length of the segment tail checked by [`Expectation::Persists`].
    pub tail_window: T,
}

impl<T: Real> Default for PhaseThresholds<T> {
    fn default() -> Self {
        Self {
            fraction: T::lit(0.05),
            persist_factor: T::lit(10.0),
            tail_window: T::one(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TaskPhaseStats<T: Real> {
    pub task: String,
    pub start: T,
    pub end: T,
    pub min: T,
    pub max: T,
    pub tail_min: T,
    /// Fraction of steps over which the value did not increase.
    pub nonincreasing_fraction: T,
    pub threshold: T,
    pub expectation: Option<Expectation>,
    pub satisfied: Option<bool>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SegmentReport<T: Real> {
    pub index: usize,
    pub start_time: T,
    pub end_time: T,
    pub tasks: Vec<TaskPhaseStats<T>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PhaseReport<T: Real> {
    pub segments: Vec<SegmentReport<T>>,
}

impl<T: Real> PhaseReport<T> {
    /// Every declared expectation holds (vacuously true with none declared).
    pub fn all_satisfied(&self) -> bool {
        self.segments
            .iter()
            .flat_map(|s| &s.tasks)
            .all(|t| t.satisfied != Some(false))
    }
}

/// Per-segment statistics of each task value. Each segment is analyzed over
/// records with `t` in `[start, end]`, so a segment's end value is the value
/// at the switching time. `expectations[s]` lists `(task index, expectation)`
/// pairs for segment `s`.
pub fn phase_report<T: Real>(
    trace: &SimulationTrace<T>,
    schedule: &PrioritySchedule<T>,
    thresholds: &PhaseThresholds<T>,
    expectations: &[Vec<(usize, Expectation)>],
) -> PhaseReport<T> {
    let m = trace.task_ids.len();
    let initial = trace
        .records
        .first()
        .map(|r| r.values.clone())
        .unwrap_or_else(|| DVector::zeros(m));
    let mut segments = Vec::new();
    for (index, seg) in schedule.segments().iter().enumerate() {
        let window: Vec<_> = trace
            .records
            .iter()
            .filter(|r| r.t >= seg.start && r.t <= seg.end)
            .collect();
        let Some(last) = window.last() else {
            continue;
        };
        let tail_start = last.t - thresholds.tail_window;
        let mut tasks = Vec::with_capacity(m);
        for i in 0..m {
            let series: Vec<T> = window.iter().map(|r| r.values[i]).collect();
            let start = series[0];
            let end = series[series.len() - 1];
            let min = series.iter().copied().fold(start, |a, b| a.min(b));
            let max = series.iter().copied().fold(start, |a, b| a.max(b));
            let tail_min = window
                .iter()
                .filter(|r| r.t >= tail_start)
                .map(|r| r.values[i])
                .fold(end, |a, b| a.min(b));
            let steps = series.len().saturating_sub(1);
            let nonincreasing = series.windows(2).filter(|w| w[1] <= w[0]).count();
            let nonincreasing_fraction = if steps == 0 {
                T::one()
            } else {
                T::from_usize(nonincreasing).unwrap() / T::from_usize(steps).unwrap()
            };
            let threshold = thresholds.fraction * start.max(initial[i]);
            let expectation = expectations
                .get(index)
                .and_then(|list| list.iter().find(|(t, _)| *t == i).map(|(_, e)| *e));
            let satisfied = expectation.map(|e| match e {
                Expectation::Converges => end <= threshold,
                Expectation::Grows => end > start,
                Expectation::Persists => tail_min > thresholds.persist_factor * threshold,
            });
            tasks.push(TaskPhaseStats {
                task: trace.task_ids[i].clone(),
                start,
                end,
                min,
                max,
                tail_min,
                nonincreasing_fraction,
                threshold,
                expectation,
                satisfied,
            });
        }
        segments.push(SegmentReport {
            index,
            start_time: seg.start,
            end_time: last.t,
            tasks,
        });
    }
    PhaseReport { segments }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qp::QpStatus;
    use crate::sim::StepRecord;
    use crate::stack::{build_k, PriorityRelation, ScheduleSegment};

    fn trace(values: &[(f64, [f64; 2])]) -> SimulationTrace<f64> {
        SimulationTrace {
            task_ids: vec!["A".into(), "B".into()],
            state_dim: 0,
            input_dim: 0,
            records: values
                .iter()
                .map(|&(t, v)| StepRecord {
                    t,
                    x: DVector::zeros(0),
                    u: DVector::zeros(0),
                    values: DVector::from_column_slice(&v),
                    delta: DVector::zeros(2),
                    residuals: DVector::zeros(2),
                    active: vec![],
                    dropped: vec![false; 2],
                    segment: 0,
                    status: QpStatus::Optimal,
                    iterations: 0,
                    solve_time_s: 0.0,
                })
                .collect(),
            failure: None,
        }
    }

    #[test]
    fn nullspace_norms() {
        let tr = trace(&[(0.0, [1.0, 10.0]), (1.0, [0.5, 10.0]), (2.0, [0.5, 10.0])]);
        let order = vec!["A".to_owned(), "B".to_owned()];
        let k = build_k(&[PriorityRelation::new("A", "B", 0.05).unwrap()], &order).unwrap();
        let rep = check_nullspace_convergence(&tr, &k, None, 0.05);
        assert_eq!(rep.norms, vec![0.5, 0.0, 0.0]);
        assert!(rep.converged);
        assert_eq!(rep.ratio, 0.0);

        let empty = check_nullspace_convergence(&tr, &PrioritizationMatrix::empty(2), None, 0.05);
        assert!(empty.norms.iter().all(|&n| n == 0.0));
        assert!(empty.converged);

        let windowed = check_nullspace_convergence(&tr, &k, Some((0.5, 2.0)), 0.05);
        assert_eq!(windowed.times, vec![1.0, 2.0]);
    }

    #[test]
    fn phase_expectations() {
        let tr = trace(&[
            (0.0, [1.0, 1.0]),
            (1.0, [0.5, 2.0]),
            (2.0, [0.01, 3.0]),
            (3.0, [0.02, 3.0]),
        ]);
        let schedule = PrioritySchedule::new(vec![
            ScheduleSegment {
                start: 0.0,
                end: 2.0,
                relations: vec![],
            },
            ScheduleSegment {
                start: 2.0,
                end: 3.0,
                relations: vec![],
            },
        ])
        .unwrap();
        let exp = vec![
            vec![(0, Expectation::Converges), (1, Expectation::Grows)],
            vec![(1, Expectation::Persists)],
        ];
        let rep = phase_report(&tr, &schedule, &PhaseThresholds::default(), &exp);
        assert!(rep.all_satisfied(), "{rep:?}");
        let a = &rep.segments[0].tasks[0];
        assert_eq!((a.start, a.end, a.min, a.max), (1.0, 0.01, 0.01, 1.0));
        assert_eq!(a.nonincreasing_fraction, 1.0);
        assert_eq!(rep.segments[1].tasks[0].threshold, 0.05);

        let wrong = vec![vec![(1, Expectation::Converges)]];
        assert!(!phase_report(&tr, &schedule, &PhaseThresholds::default(), &wrong).all_satisfied());
    }
}
