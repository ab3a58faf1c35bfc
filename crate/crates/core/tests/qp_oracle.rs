//! Stack QPs against a brute-force oracle that solves the equality-constrained
//! problem for every subset of rows and keeps the best feasible point.

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use taskstack::{QpProblem, QpSolver};

const INPUTS: usize = 6;
const TASKS: usize = 4;

fn brute_force(p: &QpProblem) -> Option<f64> {
    let (h, c, a, b) = (p.h(), p.c(), p.a(), p.b());
    let (d, rows) = (p.dim(), p.constraint_count());
    let mut best: Option<f64> = None;
    for mask in 0u32..(1 << rows) {
        let act: Vec<usize> = (0..rows).filter(|i| mask & (1 << i) != 0).collect();
        let k = act.len();
        let mut kkt = DMatrix::zeros(d + k, d + k);
        kkt.view_mut((0, 0), (d, d)).copy_from(h);
        let mut rhs = DVector::zeros(d + k);
        rhs.rows_mut(0, d).copy_from(&(-c));
        for (j, &i) in act.iter().enumerate() {
            for col in 0..d {
                kkt[(d + j, col)] = a[(i, col)];
                kkt[(col, d + j)] = a[(i, col)];
            }
            rhs[d + j] = b[i];
        }
        let svd = kkt.svd(true, true);
        if svd.singular_values.min() < 1e-10 * svd.singular_values.max() {
            continue;
        }
        let Ok(sol) = svd.solve(&rhs, 0.0) else { continue };
        let z = sol.rows(0, d).into_owned();
        if (a * &z - b).max() > 1e-9 {
            continue;
        }
        let f = p.objective(&z);
        best = Some(best.map_or(f, |g: f64| g.min(f)));
    }
    best
}

fn stack_qp(f0: &[f64], f1: &[f64], k_rows: &[(usize, usize, f64)], kappa: f64) -> QpProblem {
    let d = INPUTS + TASKS;
    let mut h = DMatrix::zeros(d, d);
    for i in 0..d {
        h[(i, i)] = if i < INPUTS { 2.0 } else { 2.0 * kappa };
    }
    let rows = TASKS + k_rows.len();
    let mut a = DMatrix::zeros(rows, d);
    let mut b = DVector::zeros(rows);
    for t in 0..TASKS {
        for j in 0..INPUTS {
            a[(t, j)] = f1[t * INPUTS + j];
        }
        a[(t, INPUTS + t)] = -1.0;
        b[t] = -f0[t];
    }
    // δ_hi ≤ l δ_lo written as δ_hi − l δ_lo ≤ 0
    for (r, &(hi, lo, l)) in k_rows.iter().enumerate() {
        a[(TASKS + r, INPUTS + hi)] = 1.0;
        a[(TASKS + r, INPUTS + lo)] = -l;
    }
    QpProblem::new(h, DVector::zeros(d), a, b).unwrap()
}

fn relation() -> impl Strategy<Value = (usize, usize, f64)> {
    // hi < lo keeps the relations acyclic, so the problem is always feasible
    (0..TASKS - 1, 1..TASKS, 0.01..1.0f64).prop_map(|(hi, span, l)| (hi, (hi + span).min(TASKS - 1), l))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(96))]

    #[test]
    fn dual_active_set_matches_enumeration(
        f0 in proptest::collection::vec(-3.0..3.0f64, TASKS),
        f1 in proptest::collection::vec(-1.0..1.0f64, TASKS * INPUTS),
        k_rows in proptest::collection::vec(relation(), 0..4),
        kappa in prop_oneof![Just(0.1), Just(1.0), Just(10.0), Just(1000.0)],
    ) {
        let p = stack_qp(&f0, &f1, &k_rows, kappa);
        let sol = QpSolver::default().solve(&p);
        let oracle = brute_force(&p).expect("acyclic relations are feasible");
        let got = p.objective(&sol.z);
        prop_assert!((got - oracle).abs() <= 1e-4 * (1.0 + oracle.abs()), "solver {} oracle {}", got, oracle);
        prop_assert!((p.a() * &sol.z - p.b()).max() <= 1e-8);
    }
}
