//! Prioritized execution of tasks encoded as value functions.
//!
//! Each task supplies a value function `J_i` that acts as a control Lyapunov
//! function. At every step one quadratic program picks the input `u` and
//! per-task slacks `δ` subject to the relaxed decrease conditions
//! `L_f0 J_i + L_f1 J_i u + σ_i ≤ δ_i` and a priority matrix `Kδ ≥ 0`.
//! Priorities change over time through a piecewise-constant schedule.
//!
//! The numerics are generic over [`scalar::Real`]; the aliases below fix the
//! scalar to `f64`, which is what the configuration layer and CLI use.

// `!(x > 0.0)` is used on purpose so that NaN inputs are rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod clf;
pub mod comparison;
pub mod config;
pub mod dynamics;
pub mod error;
pub mod plot;
pub mod qp;
pub mod scalar;
pub mod scenarios;
pub mod sim;
pub mod stack;
pub mod valuefn;
pub mod verify;

pub use error::{Error, Result};
pub use scalar::Real;

pub type ControlAffineSystem = dynamics::ControlAffineSystem<f64>;
pub type ClfParams = clf::ClfParams<f64>;
pub type QpProblem = qp::QpProblem<f64>;
pub type QpSolution = qp::QpSolution<f64>;
pub type QpOptions = qp::QpOptions<f64>;
pub type QpSolver = qp::QpSolver<f64>;
pub type TaskSpec = stack::TaskSpec<f64>;
pub type StackOptions = stack::StackOptions<f64>;
pub type PriorityRelation = stack::PriorityRelation<f64>;
pub type PrioritizationMatrix = stack::PrioritizationMatrix<f64>;
pub type PrioritySchedule = stack::PrioritySchedule<f64>;
pub type GoToGoal = valuefn::GoToGoal<f64>;
pub type QuadraticValue = valuefn::QuadraticValue<f64>;
pub type FormationValue = valuefn::FormationValue<f64>;
pub type GridValueFunction = valuefn::GridValueFunction<f64>;
pub type Scenario = sim::Scenario<f64>;
pub type SimulationTrace = sim::SimulationTrace<f64>;
pub type PhaseReport = sim::PhaseReport<f64>;
pub type ComparisonReport = comparison::ComparisonReport<f64>;
