//! Undiscounted value iteration on a grid with a cost-free termination ball:
//!
//! `J_{k+1}(x) = min_{u ∈ U} { g(x, u) + J_k(f(x, u)) }`, `J_0 = 0`.
//!
//! The state part of the running cost is integrated over the step with the
//! trapezoidal rule, `g = (½(q(x) + q(f(x, u))) + r‖u‖²)·dt`.
//!
//! Successor values are read by multilinear interpolation. Successors that
//! leave the grid are clamped to the boundary and charged `boundary_penalty`;
//! successors inside the termination ball cost nothing further. Sweeps are
//! Jacobi-style, so every node of a sweep reads the previous iterate and the
//! nodes are processed in parallel.

use nalgebra::DVector;
use rayon::prelude::*;

use super::{GridAxes, GridValueFunction, QuadraticCost};
use crate::dynamics::DiscreteSystem;
use crate::error::{check_dim, Error, Result};
use crate::scalar::Real;

/// Grid, termination ball and finite action set for [`value_iteration`].
/// The ball is centered at the cost center.
#[derive(Clone, Debug)]
pub struct GridSpec<T: Real> {
    pub axes: GridAxes<T>,
    pub termination_radius: T,
    pub actions: Vec<DVector<T>>,
}

impl<T: Real> GridSpec<T> {
    /// Cartesian product of evenly spaced per-input action levels; the first
    /// input varies slowest.
    pub fn uniform_actions(lower: &[T], upper: &[T], counts: &[usize]) -> Result<Vec<DVector<T>>> {
        let m = lower.len();
        check_dim("action upper bounds", m, upper.len())?;
        check_dim("action counts", m, counts.len())?;
        let levels: Vec<Vec<T>> = (0..m)
            .map(|k| match counts[k] {
                0 => Err(Error::Contract(format!("action axis {k} has no levels"))),
                1 => Ok(vec![(lower[k] + upper[k]) * T::lit(0.5)]),
                c => Ok((0..c)
                    .map(|i| {
                        lower[k] + (upper[k] - lower[k]) * T::from_usize(i).unwrap() / T::from_usize(c - 1).unwrap()
                    })
                    .collect()),
            })
            .collect::<Result<_>>()?;
        let total: usize = counts.iter().product();
        let mut actions = Vec::with_capacity(total);
        for flat in 0..total {
            let mut rem = flat;
            let mut a = DVector::zeros(m);
            for k in (0..m).rev() {
                a[k] = levels[k][rem % counts[k]];
                rem /= counts[k];
            }
            actions.push(a);
        }
        Ok(actions)
    }
}

#[derive(Clone, Debug)]
pub struct IterationOptions<T: Real> {
    /// Sup-norm Bellman residual at which iteration stops.
    pub tol: T,
    pub max_sweeps: usize,
    /// Extra cost charged when a successor is clamped back onto the grid.
    pub boundary_penalty: T,
}

impl<T: Real> Default for IterationOptions<T> {
    fn default() -> Self {
        Self {
            tol: T::lit(1e-6),
            max_sweeps: 20_000,
            boundary_penalty: T::zero(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct IterationReport<T: Real> {
    pub sweeps: usize,
    pub residual: T,
    pub residual_history: Vec<T>,
    /// Every sweep was pointwise non-decreasing.
    pub monotone: bool,
}

struct NodeTransitions<T> {
    terminal: bool,
    // per action: step cost (penalty included) and stencil range
    costs: Vec<T>,
    ranges: Vec<(u32, u32)>,
    stencil: Vec<(u32, T)>,
}

pub fn value_iteration<T: Real>(
    dsys: &DiscreteSystem<T>,
    cost: &QuadraticCost<T>,
    grid: &GridSpec<T>,
    opts: &IterationOptions<T>,
) -> Result<(GridValueFunction<T>, IterationReport<T>)> {
    let sys = dsys.base();
    check_dim("grid dimensions vs state", sys.state_dim(), grid.axes.dims())?;
    check_dim("cost dimension vs state", sys.state_dim(), cost.dim())?;
    if grid.actions.is_empty() {
        return Err(Error::Contract("value iteration needs a nonempty action set".into()));
    }
    for a in &grid.actions {
        check_dim("action", sys.input_dim(), a.len())?;
    }
    if !(opts.boundary_penalty >= T::zero()) {
        return Err(Error::Contract("boundary penalty must be nonnegative".into()));
    }

    let axes = &grid.axes;
    let dt = dsys.dt();
    let radius = grid.termination_radius;
    let in_ball = |x: &DVector<T>| (x - &cost.center).norm() <= radius;

    let transitions: Vec<NodeTransitions<T>> = (0..axes.node_count())
        .into_par_iter()
        .map(|flat| {
            let x = axes.node(flat);
            let mut node = NodeTransitions {
                terminal: in_ball(&x),
                costs: Vec::new(),
                ranges: Vec::new(),
                stencil: Vec::new(),
            };
            if node.terminal {
                return Ok(node);
            }
            for a in &grid.actions {
                let g = cost.eval(&x, a);
                if !(g >= T::zero()) {
                    return Err(Error::Contract(format!(
                        "stage cost {g} at state {:?} and input {:?} is negative",
                        x.as_slice(),
                        a.as_slice()
                    )));
                }
                let next = dsys.map(&x, a)?;
                let start = node.stencil.len() as u32;
                let mut step_cost = (g + T::lit(0.5) * (cost.state_cost(&next) - cost.state_cost(&x))) * dt;
                if !in_ball(&next) {
                    let (stencil, out) = axes.stencil(&next);
                    if out {
                        step_cost += opts.boundary_penalty;
                    }
                    node.stencil.extend(stencil.into_iter().map(|(i, w)| (i as u32, w)));
                }
                node.costs.push(step_cost);
                node.ranges.push((start, node.stencil.len() as u32));
            }
            Ok(node)
        })
        .collect::<Result<_>>()?;

    let mut values = vec![T::zero(); axes.node_count()];
    let mut history = Vec::new();
    let mut monotone = true;
    for sweep in 1..=opts.max_sweeps {
        let next: Vec<T> = transitions
            .par_iter()
            .map(|node| {
                if node.terminal {
                    return T::zero();
                }
                let mut best = T::max_value().unwrap_or_else(|| T::lit(f64::MAX));
                // strict comparison keeps the lowest-index minimizer
                for (c, &(s, e)) in node.costs.iter().zip(&node.ranges) {
                    let succ = node.stencil[s as usize..e as usize]
                        .iter()
                        .fold(T::zero(), |acc, &(i, w)| acc + w * values[i as usize]);
                    let q = *c + succ;
                    if q < best {
                        best = q;
                    }
                }
                best
            })
            .collect();

        let mut residual = T::zero();
        for ((node, new), old) in transitions.iter().zip(&next).zip(&values) {
            if *new < *old {
                monotone = false;
            }
            if !node.terminal {
                residual = residual.max((*new - *old).abs());
            }
        }
        values = next;
        history.push(residual);
        if residual <= opts.tol {
            let gvf = GridValueFunction::new(axes.clone(), values, radius, dt, grid.actions.clone(), cost.clone())?;
            return Ok((
                gvf,
                IterationReport {
                    sweeps: sweep,
                    residual,
                    residual_history: history,
                    monotone,
                },
            ));
        }
    }
    Err(Error::NonConvergence {
        what: "value iteration",
        iterations: opts.max_sweeps,
        residual: history.last().copied().unwrap_or_else(T::zero).to_f64_lossy(),
    })
}
