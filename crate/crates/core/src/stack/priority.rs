use std::collections::HashMap;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Default scale `l` in `δ_higher ≤ l·δ_lower`.
pub const DEFAULT_PRIORITY_SCALE: f64 = 0.05;

/// `higher ≺ lower`: the slack of `higher` is kept below `scale` times the
/// slack of `lower`.
#[derive(Clone, Debug, PartialEq)]
pub struct PriorityRelation<T: Real> {
    pub higher: String,
    pub lower: String,
    pub scale: T,
}

impl<T: Real> PriorityRelation<T> {
    pub fn new(higher: impl Into<String>, lower: impl Into<String>, scale: T) -> Result<Self> {
        let rel = Self {
            higher: higher.into(),
            lower: lower.into(),
            scale,
        };
        rel.validate()?;
        Ok(rel)
    }

    /// Relation with the default scale.
    pub fn with_default_scale(higher: impl Into<String>, lower: impl Into<String>) -> Result<Self> {
        Self::new(higher, lower, T::lit(DEFAULT_PRIORITY_SCALE))
    }

    pub fn validate(&self) -> Result<()> {
        if self.higher == self.lower {
            return Err(Error::Contract(format!(
                "task `{}` cannot be prioritized over itself",
                self.higher
            )));
        }
        if !(self.scale > T::zero() && self.scale <= T::lit(0.5)) {
            return Err(Error::Contract(format!(
                "priority scale {} for {} ≺ {} must lie in (0, 0.5]",
                self.scale, self.higher, self.lower
            )));
        }
        if self.scale > T::lit(0.1) {
            log::warn!(
                "priority scale {} for {} ≺ {} is large; priorities will be soft",
                self.scale,
                self.higher,
                self.lower
            );
        }
        Ok(())
    }
}

/// Rows encode `Kδ ≥ 0`: relation `i ≺ j` with scale `l` puts `-1` in
/// column `i` and `l` in column `j`.
#[derive(Clone, Debug, PartialEq)]
pub struct PrioritizationMatrix<T: Real> {
    matrix: DMatrix<T>,
}

impl<T: Real> PrioritizationMatrix<T> {
    pub fn empty(task_count: usize) -> Self {
        Self {
            matrix: DMatrix::zeros(0, task_count),
        }
    }

    pub fn matrix(&self) -> &DMatrix<T> {
        &self.matrix
    }

    pub fn row_count(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn task_count(&self) -> usize {
        self.matrix.ncols()
    }
}

fn has_cycle(edges: &[(usize, usize)], n: usize) -> bool {
    // Kahn's algorithm: a cycle leaves nodes with positive in-degree
    let mut indegree = vec![0usize; n];
    for &(_, b) in edges {
        indegree[b] += 1;
    }
    let mut queue: Vec<usize> = (0..n).filter(|&i| indegree[i] == 0).collect();
    let mut seen = 0;
    while let Some(v) = queue.pop() {
        seen += 1;
        for &(a, b) in edges {
            if a == v {
                indegree[b] -= 1;
                if indegree[b] == 0 {
                    queue.push(b);
                }
            }
        }
    }
    seen < n
}

pub fn build_k<T: Real>(relations: &[PriorityRelation<T>], task_order: &[String]) -> Result<PrioritizationMatrix<T>> {
    let index: HashMap<&str, usize> = task_order.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect();
    let lookup = |id: &str| index.get(id).copied().ok_or_else(|| Error::UnknownTask(id.to_owned()));
    let mut matrix = DMatrix::zeros(relations.len(), task_order.len());
    let mut edges = Vec::with_capacity(relations.len());
    for (row, rel) in relations.iter().enumerate() {
        rel.validate()?;
        let hi = lookup(&rel.higher)?;
        let lo = lookup(&rel.lower)?;
        matrix[(row, hi)] = -T::one();
        matrix[(row, lo)] = rel.scale;
        edges.push((hi, lo));
    }
    if has_cycle(&edges, task_order.len()) {
        log::warn!("priority relations contain a cycle; the stack stays feasible but the ordering is ambiguous");
    }
    Ok(PrioritizationMatrix { matrix })
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScheduleSegment<T: Real> {
    pub start: T,
    pub end: T,
    pub relations: Vec<PriorityRelation<T>>,
}

/// Time-ordered stack segments. Segments are half-open `[start, end)`,
/// except the last one, which also contains its end time.
#[derive(Clone, Debug, PartialEq)]
pub struct PrioritySchedule<T: Real> {
    segments: Vec<ScheduleSegment<T>>,
}

impl<T: Real> PrioritySchedule<T> {
    pub fn new(segments: Vec<ScheduleSegment<T>>) -> Result<Self> {
        if segments.is_empty() {
            return Err(Error::Contract("schedule needs at least one segment".into()));
        }
        for (k, seg) in segments.iter().enumerate() {
            if !(seg.start < seg.end) {
                return Err(Error::Contract(format!(
                    "schedule segment {k} has start {} not before end {}",
                    seg.start, seg.end
                )));
            }
            for rel in &seg.relations {
                rel.validate()?;
            }
        }
        for pair in segments.windows(2) {
            if pair[0].end != pair[1].start {
                return Err(Error::Contract(format!(
                    "schedule segments must be contiguous: one ends at {}, the next starts at {}",
                    pair[0].end, pair[1].start
                )));
            }
        }
        Ok(Self { segments })
    }

    /// One segment with the same relations over `[0, end]`.
    pub fn constant(relations: Vec<PriorityRelation<T>>, end: T) -> Result<Self> {
        Self::new(vec![ScheduleSegment {
            start: T::zero(),
            end,
            relations,
        }])
    }

    pub fn segments(&self) -> &[ScheduleSegment<T>] {
        &self.segments
    }

    pub fn start(&self) -> T {
        self.segments[0].start
    }

    pub fn end(&self) -> T {
        self.segments[self.segments.len() - 1].end
    }

    pub fn segment_index_at(&self, t: T) -> Result<usize> {
        let last = self.segments.len() - 1;
        self.segments
            .iter()
            .position(|s| s.start <= t && t < s.end)
            .or_else(|| (t == self.segments[last].end).then_some(last))
            .ok_or_else(|| Error::OutsideSchedule(t.to_f64_lossy()))
    }

    /// Checks every segment compiles against `task_order`.
    pub fn validate_tasks(&self, task_order: &[String]) -> Result<()> {
        for seg in &self.segments {
            build_k(&seg.relations, task_order)?;
        }
        Ok(())
    }
}

pub fn schedule_at<T: Real>(
    schedule: &PrioritySchedule<T>,
    t: T,
    task_order: &[String],
) -> Result<PrioritizationMatrix<T>> {
    let idx = schedule.segment_index_at(t)?;
    build_k(&schedule.segments[idx].relations, task_order)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ids(n: usize) -> Vec<String> {
        (1..=n).map(|i| format!("T{i}")).collect()
    }

    fn rel(a: &str, b: &str) -> PriorityRelation<f64> {
        PriorityRelation::with_default_scale(a, b).unwrap()
    }

    #[test]
    fn two_task_matrix() {
        let k = build_k(&[rel("T1", "T2")], &ids(2)).unwrap();
        assert_eq!(k.matrix(), &DMatrix::from_row_slice(1, 2, &[-1.0, 0.05]));
    }

    #[test]
    fn empty_relations_give_zero_rows() {
        let k = build_k::<f64>(&[], &ids(3)).unwrap();
        assert_eq!(k.row_count(), 0);
        assert_eq!(k.task_count(), 3);
    }

    #[test]
    fn lower_tasks_under_first() {
        let k = build_k(&[rel("T2", "T1"), rel("T3", "T1"), rel("T4", "T1")], &ids(4)).unwrap();
        let expected = DMatrix::from_row_slice(
            3,
            4,
            &[0.05, -1.0, 0.0, 0.0, 0.05, 0.0, -1.0, 0.0, 0.05, 0.0, 0.0, -1.0],
        );
        assert_eq!(k.matrix(), &expected);
    }

    #[test]
    fn unknown_id_and_bad_scale() {
        assert!(matches!(build_k(&[rel("T1", "T9")], &ids(2)), Err(Error::UnknownTask(id)) if id == "T9"));
        assert!(PriorityRelation::new("T1", "T1", 0.05).is_err());
        assert!(PriorityRelation::new("T1", "T2", 0.7).is_err());
        assert!(PriorityRelation::new("T1", "T2", 0.0).is_err());
        assert!(PriorityRelation::new("T1", "T2", 0.2).is_ok());
    }

    #[test]
    fn cycles_still_build() {
        let k = build_k(&[rel("T1", "T2"), rel("T2", "T1")], &ids(2)).unwrap();
        assert_eq!(k.row_count(), 2);
        assert!(has_cycle(&[(0, 1), (1, 0)], 2));
        assert!(!has_cycle(&[(0, 1), (1, 2), (0, 2)], 3));
    }

    fn three_phase() -> PrioritySchedule<f64> {
        PrioritySchedule::new(vec![
            ScheduleSegment {
                start: 0.0,
                end: 15.0,
                relations: vec![rel("T2", "T1"), rel("T3", "T1"), rel("T4", "T1")],
            },
            ScheduleSegment {
                start: 15.0,
                end: 30.0,
                relations: vec![rel("T1", "T2"), rel("T1", "T3"), rel("T1", "T4")],
            },
            ScheduleSegment {
                start: 30.0,
                end: 45.0,
                relations: vec![
                    rel("T1", "T2"),
                    rel("T2", "T3"),
                    rel("T2", "T4"),
                    rel("T1", "T3"),
                    rel("T1", "T4"),
                ],
            },
        ])
        .unwrap()
    }

    #[test]
    fn schedule_lookup() {
        let s = three_phase();
        let order = ids(4);
        assert_eq!(schedule_at(&s, 5.0, &order).unwrap().matrix()[(0, 1)], -1.0);
        let k15 = schedule_at(&s, 15.0, &order).unwrap();
        assert_eq!(k15.matrix()[(0, 0)], -1.0);
        assert_eq!(k15.row_count(), 3);
        assert_eq!(schedule_at(&s, 37.0, &order).unwrap().row_count(), 5);
        assert_eq!(s.segment_index_at(45.0).unwrap(), 2);
        assert!(matches!(s.segment_index_at(45.5), Err(Error::OutsideSchedule(_))));
        assert!(s.segment_index_at(-0.1).is_err());
    }

    #[test]
    fn schedule_validation() {
        let gap = PrioritySchedule::new(vec![
            ScheduleSegment {
                start: 0.0,
                end: 1.0,
                relations: vec![],
            },
            ScheduleSegment {
                start: 2.0,
                end: 3.0,
                relations: vec![],
            },
        ]);
        assert!(gap.is_err());
        assert!(PrioritySchedule::<f64>::constant(vec![], 0.0).is_err());
        let single = PrioritySchedule::constant(vec![rel("T1", "T2")], 10.0).unwrap();
        assert_eq!(single.segment_index_at(0.0).unwrap(), 0);
        assert_eq!(single.segment_index_at(7.3).unwrap(), 0);
        assert!(single.validate_tasks(&ids(1)).is_err());
    }

    proptest! {
        #[test]
        fn k_rows_encode_scaled_slack_order(
            delta in prop::collection::vec(0.0f64..10.0, 4),
            pairs in prop::collection::vec((0usize..4, 0usize..4, 0.01f64..0.5), 1..6),
        ) {
            let order = ids(4);
            let rels: Vec<_> = pairs
                .iter()
                .filter(|(a, b, _)| a != b)
                .map(|&(a, b, l)| PriorityRelation::new(order[a].clone(), order[b].clone(), l).unwrap())
                .collect();
            let k = build_k(&rels, &order).unwrap();
            let kd = k.matrix() * nalgebra::DVector::from_vec(delta.clone());
            for (row, r) in rels.iter().enumerate() {
                let hi = order.iter().position(|x| *x == r.higher).unwrap();
                let lo = order.iter().position(|x| *x == r.lower).unwrap();
                prop_assert_eq!(kd[row] >= 0.0, delta[hi] <= r.scale * delta[lo]);
            }
        }
    }
}
