use nalgebra::{DMatrix, DVector};

use super::{QpOptions, QpProblem, QpSolution, QpStatus};
use crate::scalar::Real;

const PROX_MAX_OUTER: usize = 200;

pub(super) fn solve<T: Real>(p: &QpProblem<T>, opts: &QpOptions<T>, hint: &[usize]) -> QpSolution<T> {
    if let Some(chol) = p.h.clone().cholesky() {
        return solve_strict(p, &chol.inverse(), &p.c, opts, hint);
    }
    // Singular PSD Hessian: proximal-point outer loop on H + ρI, each
    // subproblem strictly convex; the fixed point solves the original QP.
    log::debug!("QP Hessian is singular; using proximal regularization");
    let d = p.dim();
    let rho = T::lit(1e-3) * T::one().max(p.h.amax());
    let reg = &p.h + DMatrix::identity(d, d) * rho;
    let ginv = match reg.cholesky() {
        Some(ch) => ch.inverse(),
        None => {
            return failed(p, QpStatus::MaxIter, 0);
        }
    };
    let mut z = DVector::zeros(d);
    let mut total = 0;
    let mut sol = failed(p, QpStatus::MaxIter, 0);
    for _ in 0..PROX_MAX_OUTER {
        let shifted = &p.c - &z * rho;
        sol = solve_strict(p, &ginv, &shifted, opts, hint);
        total += sol.iterations;
        if sol.status != QpStatus::Optimal {
            break;
        }
        let step = (&sol.z - &z).amax();
        z = sol.z.clone();
        if step <= opts.tol * T::lit(1e-2) {
            break;
        }
    }
    sol.iterations = total;
    sol.kkt_residual = p.kkt_residual(&sol.z, &sol.duals);
    if sol.status == QpStatus::Optimal && sol.kkt_residual > opts.tol * T::lit(1e2) {
        sol.status = QpStatus::MaxIter;
    }
    sol
}

fn failed<T: Real>(p: &QpProblem<T>, status: QpStatus, iterations: usize) -> QpSolution<T> {
    QpSolution {
        z: DVector::zeros(p.dim()),
        duals: DVector::zeros(p.constraint_count()),
        status,
        kkt_residual: T::max_value().unwrap_or_else(|| T::lit(f64::MAX)),
        iterations,
        active: vec![false; p.constraint_count()],
        infeasible_row: None,
    }
}

/// Rows that take part in the solve: zero rows and exact duplicates are skipped.
fn usable_rows<T: Real>(p: &QpProblem<T>, tol: T) -> Result<Vec<bool>, usize> {
    let nc = p.constraint_count();
    let mut usable = vec![true; nc];
    let tiny = T::default_epsilon() * T::lit(16.0);
    for i in 0..nc {
        let row_i = p.a.row(i);
        let scale = T::one().max(row_i.amax());
        if row_i.amax() <= tiny {
            if p.b[i] < -tol {
                return Err(i);
            }
            usable[i] = false;
            continue;
        }
        for j in 0..i {
            if usable[j]
                && (row_i - p.a.row(j)).amax() <= tiny * scale
                && (p.b[i] - p.b[j]).abs() <= tiny * T::one().max(p.b[i].abs())
            {
                log::warn!("QP constraint row {i} duplicates row {j}; ignoring it");
                usable[i] = false;
                break;
            }
        }
    }
    Ok(usable)
}

fn solve_strict<T: Real>(
    p: &QpProblem<T>,
    ginv: &DMatrix<T>,
    c: &DVector<T>,
    opts: &QpOptions<T>,
    hint: &[usize],
) -> QpSolution<T> {
    let nc = p.constraint_count();
    let eps = T::default_epsilon();
    let infinity = T::max_value().unwrap_or_else(|| T::lit(f64::MAX));

    let mut z = -(ginv * c);
    let mut active: Vec<usize> = Vec::new();
    let mut mult: Vec<T> = Vec::new();
    let mut iterations = 0;

    let finish = |z: DVector<T>, active: &[usize], mult: &[T], status, iterations, infeasible_row| {
        let mut duals = DVector::zeros(nc);
        let mut mask = vec![false; nc];
        for (&j, &m) in active.iter().zip(mult) {
            duals[j] = m;
            mask[j] = true;
        }
        let kkt_residual = p.kkt_residual(&z, &duals);
        QpSolution {
            z,
            duals,
            status,
            kkt_residual,
            iterations,
            active: mask,
            infeasible_row,
        }
    };

    let usable = match usable_rows(p, opts.tol) {
        Ok(u) => u,
        Err(row) => return finish(z, &[], &[], QpStatus::Infeasible, 0, Some(row)),
    };

    loop {
        // pick the constraint to add: hinted rows first, then the worst
        // normalized violation, ties to the lowest index
        let violation = |j: usize, z: &DVector<T>| {
            let row = p.a.row(j);
            (row.dot(&z.transpose()) - p.b[j]) / row.norm()
        };
        let candidates: Vec<usize> = (0..nc)
            .filter(|&j| usable[j] && !active.contains(&j) && violation(j, &z) > opts.tol)
            .collect();
        let Some(&first) = candidates.first() else {
            return finish(z, &active, &mult, QpStatus::Optimal, iterations, None);
        };
        let pick = hint
            .iter()
            .copied()
            .find(|h| candidates.contains(h))
            .unwrap_or_else(|| {
                candidates.iter().copied().fold(first, |best, j| {
                    if violation(j, &z) > violation(best, &z) {
                        j
                    } else {
                        best
                    }
                })
            });

        // normal of the added row in `nᵀz ≥ b'` form
        let normal: DVector<T> = -p.a.row(pick).transpose();
        let mut trial = mult.clone();
        trial.push(T::zero());

        loop {
            iterations += 1;
            if iterations > opts.max_iter {
                mult = trial[..active.len()].to_vec();
                return finish(z, &active, &mult, QpStatus::MaxIter, iterations, None);
            }

            let q = active.len();
            let g_np = ginv * &normal;
            let (step_dir, r) = if q == 0 {
                (g_np.clone(), DVector::zeros(0))
            } else {
                let n_act = DMatrix::from_fn(p.dim(), q, |i, k| -p.a[(active[k], i)]);
                let g_n = ginv * &n_act;
                let gram = n_act.tr_mul(&g_n);
                let Some(gram_inv) = gram.try_inverse() else {
                    log::warn!("QP working set became linearly dependent");
                    mult = trial[..q].to_vec();
                    return finish(z, &active, &mult, QpStatus::MaxIter, iterations, None);
                };
                let r = &gram_inv * g_n.tr_mul(&normal);
                (&g_np - &g_n * &r, r)
            };

            // partial step keeping multipliers of the working set nonnegative
            let r_scale = T::one().max(r.amax());
            let mut t_partial = infinity;
            let mut drop_at = None;
            for k in 0..q {
                if r[k] > eps * T::lit(1e3) * r_scale {
                    let t = trial[k] / r[k];
                    if t < t_partial {
                        t_partial = t;
                        drop_at = Some(k);
                    }
                }
            }

            // full step making the new row active
            let slack = normal.dot(&z) + p.b[pick];
            let curvature = step_dir.dot(&normal);
            let reference = normal.dot(&g_np);
            let t_full = if curvature > eps * T::lit(1e3) * reference {
                -slack / curvature
            } else {
                infinity
            };

            if t_full == infinity && drop_at.is_none() {
                return finish(z, &active, &mult, QpStatus::Infeasible, iterations, Some(pick));
            }

            let t = t_full.min(t_partial);
            if t_full != infinity {
                z += &step_dir * t;
            }
            for k in 0..q {
                trial[k] -= t * r[k];
                if trial[k] < T::zero() {
                    trial[k] = T::zero();
                }
            }
            trial[q] += t;

            if t_full <= t_partial {
                active.push(pick);
                mult = trial;
                break;
            }
            let k = drop_at.expect("partial step has a blocking row");
            active.remove(k);
            trial.remove(k);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::super::{solve_qp, QpProblem, QpSolver, QpStatus};
    use approx::assert_relative_eq;
    use nalgebra::{DMatrix, DVector};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(xs)
    }

    #[test]
    fn one_dimensional_lower_bound() {
        // min u² s.t. u ≥ 1
        let p = QpProblem::new(
            DMatrix::from_element(1, 1, 2.0),
            v(&[0.0]),
            DMatrix::from_element(1, 1, -1.0),
            v(&[-1.0]),
        )
        .unwrap();
        let s = solve_qp(&p, 1e-8, 100);
        assert_eq!(s.status, QpStatus::Optimal);
        assert_relative_eq!(s.z[0], 1.0, epsilon = 1e-12);
        assert_relative_eq!(s.duals[0], 2.0, epsilon = 1e-12);
    }

    #[test]
    fn unconstrained_min_norm() {
        let p = QpProblem::new(
            DMatrix::identity(3, 3) * 2.0,
            DVector::zeros(3),
            DMatrix::zeros(0, 3),
            DVector::zeros(0),
        )
        .unwrap();
        let s = QpSolver::default().solve(&p);
        assert_eq!(s.status, QpStatus::Optimal);
        assert_eq!(s.z, DVector::zeros(3));
    }

    #[test]
    fn infeasible_box() {
        // x ≤ 0 and x ≥ 1
        let p = QpProblem::new(
            DMatrix::identity(1, 1),
            v(&[0.0]),
            DMatrix::from_column_slice(2, 1, &[1.0, -1.0]),
            v(&[0.0, -1.0]),
        )
        .unwrap();
        let s = QpSolver::default().solve(&p);
        assert_eq!(s.status, QpStatus::Infeasible);
        assert!(s.infeasible_row.is_some());
    }

    #[test]
    fn zero_row_with_negative_rhs_is_infeasible() {
        let p = QpProblem::new(
            DMatrix::identity(2, 2),
            v(&[0.0, 0.0]),
            DMatrix::zeros(1, 2),
            v(&[-1.0]),
        )
        .unwrap();
        let s = QpSolver::default().solve(&p);
        assert_eq!(s.status, QpStatus::Infeasible);
        assert_eq!(s.infeasible_row, Some(0));
    }

    #[test]
    fn duplicate_rows_are_tolerated() {
        let a = DMatrix::from_row_slice(3, 2, &[-1.0, 0.0, -1.0, 0.0, 0.0, -1.0]);
        let p = QpProblem::new(DMatrix::identity(2, 2), v(&[0.0, 0.0]), a, v(&[-1.0, -1.0, -2.0])).unwrap();
        let s = QpSolver::default().solve(&p);
        assert_eq!(s.status, QpStatus::Optimal);
        assert_relative_eq!(s.z, v(&[1.0, 2.0]), epsilon = 1e-12);
        assert!(s.kkt_residual < 1e-10);
    }

    #[test]
    fn singular_hessian_uses_proximal_loop() {
        // min x² s.t. x + y ≥ 2, y ≤ 1  → x = 1, y = 1
        let h = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 0.0]);
        let a = DMatrix::from_row_slice(2, 2, &[-1.0, -1.0, 0.0, 1.0]);
        let p = QpProblem::new(h, v(&[0.0, 0.0]), a, v(&[-2.0, 1.0])).unwrap();
        let s = QpSolver::default().solve(&p);
        assert_eq!(s.status, QpStatus::Optimal);
        assert_relative_eq!(s.z, v(&[1.0, 1.0]), epsilon = 1e-7);
    }

    #[test]
    fn hint_does_not_change_the_optimum() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..50 {
            let d = 6;
            let l = DMatrix::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0));
            let h = &l * l.transpose() + DMatrix::identity(d, d) * 0.1;
            let c = DVector::from_fn(d, |_, _| rng.random_range(-1.0..1.0));
            let a = DMatrix::from_fn(5, d, |_, _| rng.random_range(-1.0..1.0));
            let b = DVector::from_fn(5, |_, _| rng.random_range(-1.0..0.5));
            let p = QpProblem::new(h, c, a, b).unwrap();
            let solver = QpSolver::default();
            let cold = solver.solve(&p);
            let warm = solver.solve_warm(&p, &[4, 3, 2, 1, 0]);
            assert_eq!(cold.status, warm.status);
            if cold.status == QpStatus::Optimal {
                assert!((&cold.z - &warm.z).amax() < 1e-8);
                assert!(cold.kkt_residual < 1e-8);
            }
        }
    }
}
