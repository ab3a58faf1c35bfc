//! RK4 against the exact flow of linear systems under constant input, taken
//! from the exponential of the augmented matrix [[A, Bu], [0, 0]].

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use taskstack::ControlAffineSystem;

fn exact_step(a: &DMatrix<f64>, b: &DMatrix<f64>, x: &DVector<f64>, u: &DVector<f64>, dt: f64) -> DVector<f64> {
    let n = a.nrows();
    let mut m = DMatrix::zeros(n + 1, n + 1);
    m.view_mut((0, 0), (n, n)).copy_from(&(a * dt));
    m.view_mut((0, n), (n, 1)).copy_from(&(b * u * dt));
    let e = m.exp();
    let mut xe = DVector::zeros(n + 1);
    xe.rows_mut(0, n).copy_from(x);
    xe[n] = 1.0;
    (e * xe).rows(0, n).into_owned()
}

#[test]
fn double_integrator_matches_closed_form() {
    let sys = ControlAffineSystem::double_integrator();
    let (a, b) = sys.linear_matrices().unwrap();
    let x = DVector::from_vec(vec![1.0, -0.5]);
    let u = DVector::from_vec(vec![0.3]);
    let dt = 0.05;
    let rk = sys.step_rk4(&x, &u, dt).unwrap();
    // position gains v dt + u dt²/2 exactly; RK4 is exact on cubic flows
    let hand = DVector::from_vec(vec![1.0 - 0.5 * dt + 0.15 * dt * dt, -0.5 + 0.3 * dt]);
    assert!((&rk - &hand).amax() < 1e-14);
    assert!((rk - exact_step(a, b, &x, &u, dt)).amax() < 1e-14);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn rk4_local_error_is_fifth_order(
        a in proptest::collection::vec(-1.0..1.0f64, 9),
        b in proptest::collection::vec(-1.0..1.0f64, 6),
        x in proptest::collection::vec(-2.0..2.0f64, 3),
        u in proptest::collection::vec(-2.0..2.0f64, 2),
    ) {
        let a = DMatrix::from_row_slice(3, 3, &a);
        let b = DMatrix::from_row_slice(3, 2, &b);
        let sys = ControlAffineSystem::linear("random", a.clone(), b.clone()).unwrap();
        let (x, u) = (DVector::from_vec(x), DVector::from_vec(u));
        for dt in [0.01, 0.005] {
            let err = (sys.step_rk4(&x, &u, dt).unwrap() - exact_step(&a, &b, &x, &u, dt)).amax();
            let scale = 1.0 + x.amax() + u.amax();
            // |A| ≤ 3 here, so the Taylor remainder is below (3 dt)^5 / 120
            prop_assert!(err <= scale * (3.0 * dt).powi(5) / 120.0 * 10.0 + 1e-15, "dt {} err {:e}", dt, err);
        }
    }
}
