use std::path::Path;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::CheckResult;
use crate::clf::{ClfContext, ClfParams, Margin};
use crate::comparison::{compare_controllers, LqrSetup};
use crate::config::ScenarioConfig;
use crate::dynamics::ControlAffineSystem;
use crate::error::{Error, Result};
use crate::qp::{all_active_gain_min_real_eigenvalue, closed_form_all_active, QpProblem, QpSolver, QpStatus};
use crate::scenarios::{self, multirobot_hex_expectations, BUILTIN};
use crate::sim::{check_nullspace_convergence, phase_report, run, PhaseThresholds, Scenario, SimulationTrace};
use crate::stack::{
    assemble_qp, build_k, embed_gradient, PrioritizationMatrix, PriorityRelation, StackOptions, TaskSpec,
};
use crate::valuefn::{
    care_residual, finite_difference_gradient, hexagon_vertices, hjb_residual, value_iteration, FormationSpec,
    FormationValue, GoToGoal, GridAxes, GridSpec, IterationOptions, QuadraticCost, ValueFunction,
};

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn uniform(rng: &mut ChaCha8Rng, n: usize, half_width: f64) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.random_range(-half_width..half_width))
}

/// A value function, the plant it lives on and a state sampler.
struct Sample {
    vf: Arc<dyn ValueFunction<f64>>,
    sys: ControlAffineSystem<f64>,
    x: DVector<f64>,
}

/// Cycles through go-to-goal, Riccati and formation providers.
fn provider_samples(seed: u64, count: usize) -> Result<Vec<Sample>> {
    let mut r = rng(seed);
    let lqr = LqrSetup::double_integrator()?;
    let riccati: Arc<dyn ValueFunction<f64>> = Arc::new(lqr.quadratic_value());
    let formation: Arc<dyn ValueFunction<f64>> =
        Arc::new(FormationValue::new(FormationSpec::hexagon(1.0), 0.01, 0.01)?);
    let plane = ControlAffineSystem::single_integrator(1, 2)?;
    let team = ControlAffineSystem::single_integrator(6, 2)?;
    let hexagon = hexagon_vertices(1.0, [0.0, 0.0]);
    (0..count)
        .map(|i| {
            Ok(match i % 3 {
                0 => Sample {
                    vf: Arc::new(GoToGoal::new(uniform(&mut r, 2, 3.0), r.random_range(0.5..4.0))?),
                    sys: plane.clone(),
                    x: uniform(&mut r, 2, 3.0),
                },
                1 => Sample {
                    vf: riccati.clone(),
                    sys: lqr.system.clone(),
                    x: uniform(&mut r, 2, 2.0),
                },
                _ => Sample {
                    vf: formation.clone(),
                    sys: team.clone(),
                    x: &hexagon + uniform(&mut r, 12, 1.0),
                },
            })
        })
        .collect()
}

pub(super) fn sontag_activity(seed: u64) -> Result<CheckResult> {
    let mut worst: f64 = 0.0;
    let mut n = 0;
    for s in provider_samples(seed, 1000)? {
        let ctx = ClfContext::new(s.vf.as_ref(), &s.sys, ClfParams::default())?;
        if ctx.terms(&s.x)?.is_singular(ctx.params()) {
            continue;
        }
        let u = ctx.sontag_control(&s.x)?;
        worst = worst.max(ctx.clf_residual(&s.x, &u, Margin::Sigma)?.abs());
        n += 1;
    }
    Ok(CheckResult::at_most(
        "",
        n,
        worst,
        1e-9,
        "|CLF residual| under the Sontag input",
    ))
}

pub(super) fn min_norm_equals_sontag(seed: u64) -> Result<CheckResult> {
    let solver = QpSolver::default();
    let mut worst: f64 = 0.0;
    let samples = provider_samples(seed, 1000)?;
    for s in &samples {
        let ctx = ClfContext::new(s.vf.as_ref(), &s.sys, ClfParams::default())?;
        let qp = ctx.min_norm_control(&s.x, &solver)?;
        worst = worst.max((qp - ctx.sontag_control(&s.x)?).amax());
    }
    Ok(CheckResult::at_most(
        "",
        samples.len(),
        worst,
        1e-8,
        "max |u_qp - u_sontag|",
    ))
}

pub(super) fn optimality_transfer(seed: u64) -> Result<CheckResult> {
    let mut r = rng(seed);
    let lqr = LqrSetup::double_integrator()?;
    let v = lqr.quadratic_value();
    let ctx = ClfContext::new(&v, &lqr.system, ClfParams::default())?;
    let solver = QpSolver::default();
    let mut worst: f64 = 0.0;
    let mut n = 0;
    while n < 1000 {
        let x = uniform(&mut r, 2, 2.0);
        if ctx.lie_derivatives(&x)?.1.norm() <= 1e-6 {
            continue;
        }
        let u = ctx.min_norm_control(&x, &solver)?;
        worst = worst.max((u - lqr.optimal_control(&x)).amax());
        n += 1;
    }
    Ok(CheckResult::at_most(
        "",
        n,
        worst,
        1e-6,
        "max |u_min_norm - u*| on [-2,2]²",
    ))
}

pub(super) fn optimality_transfer_closed_loop(_: u64) -> Result<CheckResult> {
    let lqr = LqrSetup::double_integrator()?;
    let rep = compare_controllers(&lqr, None, &DVector::from_vec(vec![1.0, 1.0]), 0.01, 10.0)?;
    let dev = rep.deviation("optimal", "min_norm_riccati").unwrap_or(f64::NAN);
    Ok(CheckResult::at_most(
        "",
        rep.runs[0].times.len(),
        dev,
        1e-6,
        "closed loop from (1, 1), 10 s",
    ))
}

pub(super) fn sigma_dominates_drift(seed: u64) -> Result<CheckResult> {
    let mut worst = f64::NEG_INFINITY;
    let samples = provider_samples(seed, 1000)?;
    for s in &samples {
        let ctx = ClfContext::new(s.vf.as_ref(), &s.sys, ClfParams::default())?;
        let t = ctx.terms(&s.x)?;
        worst = worst.max(t.lf0.abs() - t.sigma);
    }
    Ok(CheckResult::at_most(
        "",
        samples.len(),
        worst,
        1e-12,
        "max |L_f0 V| - σ",
    ))
}

/// Stack QP in `z = (u, δ)` with rows `f̂1 u − δ ≤ −(f̂0 + σ)` and `−Kδ ≤ 0`.
fn stack_problem(
    f0: &DVector<f64>,
    f1: &DMatrix<f64>,
    sigma: &DVector<f64>,
    k: &DMatrix<f64>,
    kappa: f64,
) -> Result<QpProblem<f64>> {
    let (tasks, m) = f1.shape();
    let d = m + tasks;
    let h = DMatrix::from_fn(d, d, |i, j| match (i == j, i < m) {
        (false, _) => 0.0,
        (true, true) => 2.0,
        (true, false) => 2.0 * kappa,
    });
    let rows = tasks + k.nrows();
    let mut a = DMatrix::zeros(rows, d);
    let mut b = DVector::zeros(rows);
    a.view_mut((0, 0), (tasks, m)).copy_from(f1);
    for i in 0..tasks {
        a[(i, m + i)] = -1.0;
        b[i] = -f0[i] - sigma[i];
    }
    a.view_mut((tasks, m), (k.nrows(), tasks)).copy_from(&(-k));
    QpProblem::new(h, DVector::zeros(d), a, b)
}

struct Instance {
    f0: DVector<f64>,
    f1: DMatrix<f64>,
    sigma: DVector<f64>,
    k: DMatrix<f64>,
    kappa: f64,
}

/// Random stack instance with 12 inputs, 4 tasks and three relations
/// T1, T2, T3 ≺ T4. Higher tasks get larger right-hand sides so that their
/// priority rows tend to bind.
fn random_instance(r: &mut ChaCha8Rng) -> Instance {
    let f1 = DMatrix::from_fn(4, 12, |_, _| r.random_range(-1.0..1.0));
    let f0 = DVector::from_fn(4, |i, _| {
        if i < 3 {
            r.random_range(1.0..3.0)
        } else {
            r.random_range(-0.2..0.2)
        }
    });
    let sigma = DVector::from_fn(4, |_, _| r.random_range(0.0..0.5));
    let mut k = DMatrix::zeros(3, 4);
    for row in 0..3 {
        k[(row, row)] = -1.0;
        k[(row, 3)] = r.random_range(0.02..0.3);
    }
    Instance {
        f0,
        f1,
        sigma,
        k,
        kappa: 10.0,
    }
}

/// Draws instances until one has every row active with a positive multiplier.
fn all_active_instance(r: &mut ChaCha8Rng) -> Result<(Instance, DVector<f64>)> {
    for _ in 0..10_000 {
        let inst = random_instance(r);
        let p = stack_problem(&inst.f0, &inst.f1, &inst.sigma, &inst.k, inst.kappa)?;
        let sol = QpSolver::default().solve(&p);
        if sol.status == QpStatus::Optimal && sol.duals.iter().all(|&d| d > 1e-6) {
            return Ok((inst, sol.z));
        }
    }
    Err(Error::Contract("could not draw an all-active instance".into()))
}

pub(super) fn closed_form_agreement(seed: u64) -> Result<CheckResult> {
    let mut r = rng(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let (inst, z) = all_active_instance(&mut r)?;
        let cf = closed_form_all_active(&inst.f0, &inst.f1, &inst.sigma, &inst.k, inst.kappa)?;
        worst = worst
            .max((cf.u - z.rows(0, 12)).amax())
            .max((cf.delta - z.rows(12, 4)).amax());
    }
    Ok(CheckResult::at_most(
        "",
        100,
        worst,
        1e-6,
        "max |(u, δ) closed form - QP|, m=12, M=4, 3 priority rows, κ=10",
    ))
}

pub(super) fn all_active_gain_nonnegative(seed: u64) -> Result<CheckResult> {
    let mut r = rng(seed);
    let mut worst = f64::INFINITY;
    for _ in 0..100 {
        let (inst, _) = all_active_instance(&mut r)?;
        worst = worst.min(all_active_gain_min_real_eigenvalue(&inst.f1, &inst.k, inst.kappa)?);
    }
    Ok(CheckResult::at_least(
        "",
        100,
        worst,
        -1e-8,
        "smallest real eigenvalue of the all-active gain",
    ))
}

fn random_problems(seed: u64, count: usize) -> Result<Vec<QpProblem<f64>>> {
    let mut r = rng(seed);
    (0..count)
        .map(|_| {
            let mut inst = random_instance(&mut r);
            inst.f0 = uniform(&mut r, 4, 2.0);
            inst.kappa = r.random_range(0.1..100.0);
            stack_problem(&inst.f0, &inst.f1, &inst.sigma, &inst.k, inst.kappa)
        })
        .collect()
}

pub(super) fn kkt_conditions(seed: u64) -> Result<CheckResult> {
    let mut worst: f64 = 0.0;
    let problems = random_problems(seed, 100)?;
    for p in &problems {
        let sol = QpSolver::default().solve(p);
        if sol.status != QpStatus::Optimal {
            return Ok(CheckResult::flag("", false, format!("solver status {:?}", sol.status)));
        }
        worst = worst.max(p.kkt_residual(&sol.z, &sol.duals));
    }
    Ok(CheckResult::at_most(
        "",
        problems.len(),
        worst,
        1e-8,
        "worst KKT violation",
    ))
}

pub(super) fn warm_equals_cold(seed: u64) -> Result<CheckResult> {
    let mut r = rng(seed ^ 0x5eed);
    let mut worst: f64 = 0.0;
    let problems = random_problems(seed, 100)?;
    for p in &problems {
        let hint: Vec<usize> = (0..p.constraint_count()).filter(|_| r.random_bool(0.5)).collect();
        let cold = QpSolver::default().solve(p);
        let warm = QpSolver::default().solve_warm(p, &hint);
        worst = worst.max((cold.z - warm.z).amax());
    }
    Ok(CheckResult::at_most(
        "",
        problems.len(),
        worst,
        1e-8,
        "max |z_warm - z_cold|",
    ))
}

pub(super) fn scaling_invariance(seed: u64) -> Result<CheckResult> {
    let mut r = rng(seed ^ 0x5ca1e);
    let mut worst: f64 = 0.0;
    let problems = random_problems(seed, 100)?;
    for p in &problems {
        let factor = 10f64.powf(r.random_range(-3.0..3.0));
        let a = QpSolver::default().solve(p);
        let b = QpSolver::default().solve(&p.scaled(factor)?);
        worst = worst.max((a.z - b.z).amax());
    }
    Ok(CheckResult::at_most(
        "",
        problems.len(),
        worst,
        1e-8,
        "max |z - z_scaled|",
    ))
}

fn relative_gradient_error(vf: &dyn ValueFunction<f64>, x: &DVector<f64>, h: f64) -> f64 {
    let g = vf.gradient(x);
    let fd = finite_difference_gradient(|y| vf.value(y), x, h);
    (g - &fd).norm() / fd.norm().max(1e-12)
}

pub(super) fn analytic_gradients(seed: u64) -> Result<CheckResult> {
    let mut worst: f64 = 0.0;
    let samples = provider_samples(seed, 999)?;
    for s in &samples {
        worst = worst.max(relative_gradient_error(s.vf.as_ref(), &s.x, 1e-6));
    }
    Ok(CheckResult::at_most(
        "",
        samples.len(),
        worst,
        1e-5,
        "go-to-goal, Riccati and formation gradients vs central differences",
    ))
}

/// The shipped double-integrator grid, learned in place.
fn learned_grid() -> Result<crate::valuefn::GridValueFunction<f64>> {
    let cfg = scenarios::builtin("double_integrator")?;
    Ok(cfg.learning()?.learn(&cfg.system()?)?.0)
}

pub(super) fn grid_gradient(seed: u64) -> Result<CheckResult> {
    let mut r = rng(seed);
    let grid = learned_grid()?;
    let h = grid.axes().spacing(0);
    let mut errors = Vec::new();
    while errors.len() < 200 {
        let x = uniform(&mut r, 2, 1.5);
        if x.norm() < 0.3 {
            continue;
        }
        let g = grid.gradient_at(&x);
        let fd = finite_difference_gradient(|y| grid.eval(y).0, &x, 2.0 * h);
        errors.push((g - &fd).norm() / fd.norm().max(1e-12));
    }
    errors.sort_by(f64::total_cmp);
    let median = errors[errors.len() / 2];
    Ok(CheckResult::at_most(
        "",
        errors.len(),
        median,
        0.05,
        format!(
            "median relative error vs differences at twice the spacing, 81² grid (max {:.3})",
            errors[errors.len() - 1]
        ),
    ))
}

pub(super) fn hjb_residuals(seed: u64) -> Result<CheckResult> {
    let mut r = rng(seed);
    let lqr = LqrSetup::double_integrator()?;
    let quad = lqr.quadratic_value();
    let mut worst: f64 = 0.0;
    for i in 0..1000 {
        let res = if i % 2 == 0 {
            let dim = 1 + i % 3;
            let sys = ControlAffineSystem::single_integrator(1, dim)?;
            let vf = GoToGoal::new(uniform(&mut r, dim, 3.0), r.random_range(0.5..4.0))?;
            hjb_residual(&vf, &sys, &uniform(&mut r, dim, 3.0))?
        } else {
            hjb_residual(&quad, &lqr.system, &uniform(&mut r, 2, 2.0))?
        };
        worst = worst.max(res.abs());
    }
    Ok(CheckResult::at_most(
        "",
        1000,
        worst,
        1e-8,
        "|HJB residual| for go-to-goal and Riccati values",
    ))
}

pub(super) fn iteration_monotone(_: u64) -> Result<CheckResult> {
    let lqr = LqrSetup::double_integrator()?;
    let grid = GridSpec {
        axes: GridAxes::new(vec![-2.0, -2.0], vec![2.0, 2.0], vec![21, 21])?,
        termination_radius: 0.1,
        actions: GridSpec::uniform_actions(&[-4.0], &[4.0], &[41])?,
    };
    let opts = IterationOptions::default();
    let (_, rep) = value_iteration(&lqr.system.discretize(0.05)?, &QuadraticCost::identity(2), &grid, &opts)?;
    Ok(CheckResult::flag(
        "",
        rep.monotone && rep.residual <= opts.tol,
        format!(
            "{} sweeps, final residual {:e}, monotone {}",
            rep.sweeps, rep.residual, rep.monotone
        ),
    ))
}

pub(super) fn riccati_residual(seed: u64) -> Result<CheckResult> {
    let mut r = rng(seed);
    let mut worst: f64 = 0.0;
    let mut min_eig = f64::INFINITY;
    let mut asym: f64 = 0.0;
    for i in 0..50 {
        let (a, b) = if i == 0 {
            let s = ControlAffineSystem::<f64>::double_integrator();
            let (a, b) = s.linear_matrices().expect("linear");
            (a.clone(), b.clone())
        } else {
            (
                DMatrix::from_fn(3, 3, |_, _| r.random_range(-1.0..1.0)),
                DMatrix::from_fn(3, 2, |_, _| r.random_range(-1.0..1.0)),
            )
        };
        let n = a.nrows();
        let q = DMatrix::identity(n, n);
        let rw = DMatrix::identity(b.ncols(), b.ncols());
        let p = crate::valuefn::riccati_solve(&a, &b, &q, &rw)?;
        worst = worst.max(care_residual(&a, &b, &q, &rw, &p)? / (1.0 + p.norm()));
        asym = asym.max((&p - p.transpose()).amax());
        min_eig = min_eig.min(p.clone().symmetric_eigen().eigenvalues.min());
    }
    let ok = worst <= 1e-10 && asym <= 1e-10 && min_eig >= -1e-10;
    Ok(CheckResult {
        samples: 50,
        ..CheckResult::at_most(
            "",
            50,
            worst,
            1e-10,
            format!("relative residual; asymmetry {asym:e}, smallest eigenvalue {min_eig:e}"),
        )
    }
    .with_pass(ok))
}

impl CheckResult {
    fn with_pass(mut self, passed: bool) -> Self {
        if !passed && self.margin > 0.0 {
            self.margin = -self.margin;
        }
        self.passed = passed;
        self
    }
}

pub(super) fn priority_rows(seed: u64) -> Result<CheckResult> {
    let mut r = rng(seed);
    let ids: Vec<String> = (1..=5).map(|i| format!("T{i}")).collect();
    let mut mismatches = 0;
    let mut n = 0;
    for _ in 0..200 {
        let mut rels = Vec::new();
        for _ in 0..r.random_range(1..5) {
            let hi = r.random_range(0..5);
            let lo = (hi + r.random_range(1..5)) % 5;
            rels.push(PriorityRelation::new(
                ids[hi].clone(),
                ids[lo].clone(),
                r.random_range(0.01..0.5),
            )?);
        }
        let k = build_k(&rels, &ids)?;
        for _ in 0..20 {
            let delta = uniform(&mut r, 5, 2.0);
            let kd = k.matrix() * &delta;
            for (row, rel) in rels.iter().enumerate() {
                let hi = ids.iter().position(|s| *s == rel.higher).expect("known id");
                let lo = ids.iter().position(|s| *s == rel.lower).expect("known id");
                let holds = delta[hi] <= rel.scale * delta[lo];
                if holds != (kd[row] >= 0.0) {
                    mismatches += 1;
                }
                n += 1;
            }
        }
    }
    Ok(CheckResult::at_most(
        "",
        n,
        mismatches as f64,
        0.0,
        "rows where Kδ ≥ 0 disagrees with δ_hi ≤ l·δ_lo",
    ))
}

pub(super) fn embedding(seed: u64) -> Result<CheckResult> {
    let mut r = rng(seed);
    let go: Arc<dyn ValueFunction<f64>> = Arc::new(GoToGoal::new(DVector::zeros(2), 1.0)?);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let robot = r.random_range(0..6);
        let task = TaskSpec::for_robot("T", go.clone(), robot);
        let local = uniform(&mut r, 2, 5.0);
        let g = embed_gradient(&task, 12, &local)?;
        let mut expected = DVector::zeros(12);
        expected.rows_mut(2 * robot, 2).copy_from(&local);
        worst = worst.max((g - expected).amax());
    }
    Ok(CheckResult::at_most(
        "",
        100,
        worst,
        0.0,
        "embedded gradient vs block placement",
    ))
}

fn hex_tasks() -> Result<(Vec<TaskSpec<f64>>, ControlAffineSystem<f64>)> {
    let sc = scenarios::builtin("multirobot_hex")?.build(Path::new("."))?;
    Ok((sc.tasks, sc.system))
}

pub(super) fn row_independence(seed: u64) -> Result<CheckResult> {
    let mut r = rng(seed);
    let (tasks, sys) = hex_tasks()?;
    let opts = StackOptions::default();
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let x = uniform(&mut r, 12, 3.0);
        let full = assemble_qp(&tasks, &sys, &x, &PrioritizationMatrix::empty(4), &opts)?;
        let drop = r.random_range(0..4);
        let kept: Vec<_> = tasks
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != drop)
            .map(|(_, t)| t.clone())
            .collect();
        let part = assemble_qp(&kept, &sys, &x, &PrioritizationMatrix::empty(3), &opts)?;
        for (row_part, i) in (0..4).filter(|i| *i != drop).enumerate() {
            let a = full.problem.a().row(i).columns(0, 12).into_owned();
            let b = part.problem.a().row(row_part).columns(0, 12).into_owned();
            worst = worst
                .max((a - b).amax())
                .max((full.problem.b()[i] - part.problem.b()[row_part]).abs());
        }
    }
    Ok(CheckResult::at_most(
        "",
        50,
        worst,
        0.0,
        "input block and bound of each task row with one task removed",
    ))
}

pub(super) fn config_round_trip(_: u64) -> Result<CheckResult> {
    let mut failures = Vec::new();
    for (name, text) in BUILTIN {
        let cfg = ScenarioConfig::from_toml_str(text)?;
        let once = cfg.to_toml_string()?;
        let again = ScenarioConfig::from_toml_str(&once)?;
        if again != cfg || again.to_toml_string()? != once {
            failures.push(name);
        }
    }
    Ok(CheckResult::flag(
        "",
        failures.is_empty(),
        format!("{} shipped scenarios; unstable: {failures:?}", BUILTIN.len()),
    ))
}

pub(super) fn config_rejects_unknown_keys(_: u64) -> Result<CheckResult> {
    let base = scenarios::MULTIROBOT_HEX;
    let mut missed = Vec::new();
    for (anchor, key) in [
        ("[system]\n", "robots = 6\n"),
        ("[controller]\n", "kapa = 1.0\n"),
        ("[simulation]\n", "horizn = 3.0\n"),
        ("[output]\n", "plot = true\n"),
    ] {
        let text = base.replacen(anchor, &format!("{anchor}{key}"), 1);
        let name = key.split(' ').next().expect("key");
        match ScenarioConfig::from_toml_str(&text) {
            Err(e) if e.to_string().contains(name) => {}
            _ => missed.push(name),
        }
    }
    Ok(CheckResult::flag(
        "",
        missed.is_empty(),
        format!("misnamed keys not reported: {missed:?}"),
    ))
}

fn scenario(name: &str) -> Result<Scenario<f64>> {
    scenarios::builtin(name)?.build(Path::new("."))
}

pub(super) fn determinism(_: u64) -> Result<CheckResult> {
    let sc = scenario("nullspace_two_task")?;
    let same = run(&sc)?.same_trajectory(&run(&sc)?);
    Ok(CheckResult::flag(
        "",
        same,
        "two runs of nullspace_two_task, solve times excluded",
    ))
}

pub(super) fn go_to_goal_decay(_: u64) -> Result<CheckResult> {
    let mut sc = scenario("nullspace_two_task")?;
    sc.tasks.truncate(1);
    sc.schedule = crate::stack::PrioritySchedule::constant(vec![], 3.0)?;
    sc.horizon = 3.0;
    sc.x0 = DVector::from_vec(vec![3.0, 4.0]);
    sc.controller.stack.kappa = 1e8;
    let tr = run(&sc)?;
    let j0 = tr.records[0].values[0];
    let worst = tr
        .records
        .iter()
        .map(|r| {
            let exact = j0 * (-2.0 * r.t).exp();
            (r.values[0] - exact).abs() / exact
        })
        .fold(0.0, f64::max);
    Ok(CheckResult::at_most(
        "",
        tr.records.len(),
        worst,
        0.05,
        "relative deviation from J(0)·e^(-2t)",
    ))
}

pub(super) fn nullspace_convergence(_: u64) -> Result<CheckResult> {
    let sc = scenario("nullspace_two_task")?;
    let tr = run(&sc)?;
    let k = build_k(&sc.schedule.segments()[0].relations, &sc.task_ids())?;
    let rep = check_nullspace_convergence(&tr, &k, None, 0.05);
    Ok(CheckResult::at_most(
        "",
        rep.norms.len(),
        rep.ratio,
        0.05,
        format!("‖KJ‖ from {:.4} to {:.3e} over {} s", rep.initial, rep.last, sc.horizon),
    ))
}

fn hex_trace() -> Result<(Scenario<f64>, SimulationTrace<f64>)> {
    let sc = scenario("multirobot_hex")?;
    let tr = run(&sc)?;
    Ok((sc, tr))
}

pub(super) fn hex_phases(_: u64) -> Result<CheckResult> {
    let (sc, tr) = hex_trace()?;
    let thresholds = PhaseThresholds::default();
    let rep = phase_report(&tr, &sc.schedule, &thresholds, &multirobot_hex_expectations());
    // normalized margin of the tightest declared expectation
    let mut worst = f64::INFINITY;
    for t in rep.segments.iter().flat_map(|s| &s.tasks) {
        let m = match t.expectation {
            Some(crate::sim::Expectation::Converges) => t.threshold / t.end.max(1e-300),
            Some(crate::sim::Expectation::Grows) => t.end / t.start,
            Some(crate::sim::Expectation::Persists) => t.tail_min / (thresholds.persist_factor * t.threshold),
            None => continue,
        };
        worst = worst.min(m);
    }
    let ok = rep.all_satisfied() && tr.all_optimal();
    Ok(CheckResult::at_least(
        "",
        tr.records.len(),
        worst,
        1.0,
        format!("tightest phase ratio (> 1 passes); all optimal {}", tr.all_optimal()),
    )
    .with_pass(ok))
}

pub(super) fn constraint_satisfaction(_: u64) -> Result<CheckResult> {
    let (sc, tr) = hex_trace()?;
    let ids = sc.task_ids();
    let ks: Vec<_> = sc
        .schedule
        .segments()
        .iter()
        .map(|s| build_k(&s.relations, &ids))
        .collect::<Result<_>>()?;
    let mut worst: f64 = f64::NEG_INFINITY;
    for r in &tr.records {
        let kd = ks[r.segment].matrix() * &r.delta;
        worst = worst.max(r.residuals.max()).max(-kd.min());
    }
    Ok(CheckResult::at_most(
        "",
        tr.records.len(),
        worst,
        1e-6,
        "max task-row residual and -min Kδ along the hex run",
    ))
}
