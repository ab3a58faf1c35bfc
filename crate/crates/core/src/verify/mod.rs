//! Named suites of randomized and scenario-level invariant checks with a
//! machine-readable report.

mod checks;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};

pub const SUITES: [&str; 7] = ["clf", "qp", "valuefn", "stack", "config", "sim", "all"];

/// Outcome of one check. `margin` is positive exactly when the check passed;
/// for a bound `worst ≤ tolerance` it is `tolerance - worst`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub samples: usize,
    pub worst: f64,
    pub tolerance: f64,
    pub margin: f64,
    pub detail: String,
}

impl CheckResult {
    /// Passes when `worst ≤ tolerance`.
    pub fn at_most(name: &str, samples: usize, worst: f64, tolerance: f64, detail: impl Into<String>) -> Self {
        Self {
            name: name.to_owned(),
            passed: worst <= tolerance,
            samples,
            worst,
            tolerance,
            margin: tolerance - worst,
            detail: detail.into(),
        }
    }

    /// Passes when `worst ≥ tolerance`.
    pub fn at_least(name: &str, samples: usize, worst: f64, tolerance: f64, detail: impl Into<String>) -> Self {
        Self {
            name: name.to_owned(),
            passed: worst >= tolerance,
            samples,
            worst,
            tolerance,
            margin: worst - tolerance,
            detail: detail.into(),
        }
    }

    pub fn flag(name: &str, passed: bool, detail: impl Into<String>) -> Self {
        Self {
            name: name.to_owned(),
            passed,
            samples: 1,
            worst: if passed { 0.0 } else { 1.0 },
            tolerance: 0.0,
            margin: if passed { 1.0 } else { -1.0 },
            detail: detail.into(),
        }
    }

    fn errored(name: &str, err: &Error) -> Self {
        Self {
            name: name.to_owned(),
            passed: false,
            samples: 0,
            worst: f64::NAN,
            tolerance: f64::NAN,
            margin: f64::NEG_INFINITY,
            detail: format!("error: {err}"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VerifyReport {
    pub suite: String,
    pub seed: u64,
    pub passed: bool,
    pub checks: Vec<CheckResult>,
}

impl VerifyReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report is plain data")
    }

    pub fn failures(&self) -> impl Iterator<Item = &CheckResult> {
        self.checks.iter().filter(|c| !c.passed)
    }
}

type CheckFn = fn(u64) -> Result<CheckResult>;

/// `(suite, check name, check)`; names are `suite.check`.
fn registry() -> Vec<(&'static str, &'static str, CheckFn)> {
    use checks::*;
    vec![
        ("clf", "clf.sontag_activity", sontag_activity),
        ("clf", "clf.min_norm_equals_sontag", min_norm_equals_sontag),
        ("clf", "clf.optimality_transfer", optimality_transfer),
        (
            "clf",
            "clf.optimality_transfer_closed_loop",
            optimality_transfer_closed_loop,
        ),
        ("clf", "clf.sigma_dominates_drift", sigma_dominates_drift),
        ("qp", "qp.closed_form_agreement", closed_form_agreement),
        ("qp", "qp.kkt_conditions", kkt_conditions),
        ("qp", "qp.warm_equals_cold", warm_equals_cold),
        ("qp", "qp.scaling_invariance", scaling_invariance),
        ("qp", "qp.all_active_gain_nonnegative", all_active_gain_nonnegative),
        ("valuefn", "valuefn.analytic_gradients", analytic_gradients),
        ("valuefn", "valuefn.grid_gradient", grid_gradient),
        ("valuefn", "valuefn.hjb_residual", hjb_residuals),
        ("valuefn", "valuefn.iteration_monotone", iteration_monotone),
        ("valuefn", "valuefn.riccati_residual", riccati_residual),
        ("stack", "stack.priority_rows", priority_rows),
        ("stack", "stack.embedding", embedding),
        ("stack", "stack.row_independence", row_independence),
        ("config", "config.round_trip", config_round_trip),
        ("config", "config.rejects_unknown_keys", config_rejects_unknown_keys),
        ("sim", "sim.determinism", determinism),
        ("sim", "sim.go_to_goal_decay", go_to_goal_decay),
        ("sim", "sim.nullspace_convergence", nullspace_convergence),
        ("sim", "sim.hex_phases", hex_phases),
        ("sim", "sim.constraint_satisfaction", constraint_satisfaction),
    ]
}

pub fn check_names(suite: &str) -> Result<Vec<&'static str>> {
    if !SUITES.contains(&suite) {
        return Err(Error::Config(format!(
            "unknown verify suite `{suite}`; available: {}",
            SUITES.join(", ")
        )));
    }
    Ok(registry()
        .into_iter()
        .filter(|(s, _, _)| suite == "all" || *s == suite)
        .map(|(_, n, _)| n)
        .collect())
}

/// Runs a suite (or `all`). Checks run in parallel; each derives its random
/// stream from `seed` and its position, so reports are reproducible.
pub fn run_suite(suite: &str, seed: u64) -> Result<VerifyReport> {
    check_names(suite)?;
    let selected: Vec<_> = registry()
        .into_iter()
        .enumerate()
        .filter(|(_, (s, _, _))| suite == "all" || *s == suite)
        .collect();
    let checks: Vec<CheckResult> = selected
        .par_iter()
        .map(|(i, (_, name, f))| {
            let stream = seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(*i as u64);
            match f(stream) {
                Ok(mut r) => {
                    r.name = (*name).to_owned();
                    r
                }
                Err(e) => CheckResult::errored(name, &e),
            }
        })
        .collect();
    Ok(VerifyReport {
        suite: suite.to_owned(),
        seed,
        passed: checks.iter().all(|c| c.passed),
        checks,
    })
}
