//! Continuous-time algebraic Riccati equation
//! `AᵀP + PA - P B R⁻¹ Bᵀ P + Q = 0`.
//!
//! The stabilizing solution is obtained from the matrix sign function of the
//! Hamiltonian and then polished with Newton-Kleinman steps, each of which
//! solves a Lyapunov equation through its Kronecker form. Sizes here are a
//! handful of states, so the `n² × n²` Kronecker system is cheap.

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, Error, Result};
use crate::scalar::Real;

const SIGN_MAX_ITER: usize = 100;
const NEWTON_MAX_ITER: usize = 30;

/// Frobenius norm of the Riccati residual at `p`.
pub fn care_residual<T: Real>(
    a: &DMatrix<T>,
    b: &DMatrix<T>,
    q: &DMatrix<T>,
    r: &DMatrix<T>,
    p: &DMatrix<T>,
) -> Result<T> {
    let r_inv = r
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Contract("input weight R is singular".into()))?;
    let res = a.transpose() * p + p * a - p * b * r_inv * b.transpose() * p + q;
    Ok(res.norm())
}

/// Stabilizing solution of the continuous algebraic Riccati equation.
pub fn riccati_solve<T: Real>(a: &DMatrix<T>, b: &DMatrix<T>, q: &DMatrix<T>, r: &DMatrix<T>) -> Result<DMatrix<T>> {
    let n = a.nrows();
    check_dim("Riccati A columns", n, a.ncols())?;
    check_dim("Riccati B rows", n, b.nrows())?;
    let m = b.ncols();
    check_dim("Riccati Q rows", n, q.nrows())?;
    check_dim("Riccati Q columns", n, q.ncols())?;
    check_dim("Riccati R rows", m, r.nrows())?;
    check_dim("Riccati R columns", m, r.ncols())?;

    let r_inv = r
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Contract("input weight R is singular".into()))?;
    let s = b * &r_inv * b.transpose();

    let mut h = DMatrix::zeros(2 * n, 2 * n);
    h.view_mut((0, 0), (n, n)).copy_from(a);
    h.view_mut((0, n), (n, n)).copy_from(&(-&s));
    h.view_mut((n, 0), (n, n)).copy_from(&(-q));
    h.view_mut((n, n), (n, n)).copy_from(&(-a.transpose()));

    let w = matrix_sign(h)?;
    let ident = DMatrix::<T>::identity(n, n);
    let mut lhs = DMatrix::zeros(2 * n, n);
    lhs.view_mut((0, 0), (n, n)).copy_from(&w.view((0, n), (n, n)));
    lhs.view_mut((n, 0), (n, n))
        .copy_from(&(w.view((n, n), (n, n)) + &ident));
    let mut rhs = DMatrix::zeros(2 * n, n);
    rhs.view_mut((0, 0), (n, n))
        .copy_from(&(-(w.view((0, 0), (n, n)) + &ident)));
    rhs.view_mut((n, 0), (n, n)).copy_from(&(-w.view((n, 0), (n, n))));

    let svd = lhs.svd(true, true);
    let mut p = svd
        .solve(&rhs, T::default_epsilon())
        .map_err(|e| Error::Contract(format!("Riccati subspace solve failed: {e}")))?;
    p = (&p + p.transpose()) * T::lit(0.5);

    let scale = T::one() + q.norm() + a.norm() + s.norm();
    let tol = T::lit(1e-10).max(T::default_epsilon() * T::lit(1e4) * scale);
    let mut residual = care_residual(a, b, q, r, &p)?;
    let mut iterations = 0;
    while iterations < NEWTON_MAX_ITER && residual > tol * T::lit(1e-2) {
        // Newton-Kleinman: (A - BK)ᵀ X + X (A - BK) = -(Q + Kᵀ R K), K = R⁻¹BᵀP
        let k = &r_inv * b.transpose() * &p;
        let closed = a - b * &k;
        let forcing = q + k.transpose() * r * &k;
        let Some(next) = lyapunov(&closed, &forcing) else {
            break;
        };
        let next = (&next + next.transpose()) * T::lit(0.5);
        let next_residual = care_residual(a, b, q, r, &next)?;
        iterations += 1;
        if !(next_residual < residual) {
            break;
        }
        p = next;
        residual = next_residual;
    }

    if residual > tol || p.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonConvergence {
            what: "Riccati solver",
            iterations,
            residual: residual.to_f64_lossy(),
        });
    }
    Ok(p)
}

/// Solves `Aᵀ X + X A = -F` via vectorization.
fn lyapunov<T: Real>(a: &DMatrix<T>, f: &DMatrix<T>) -> Option<DMatrix<T>> {
    let n = a.nrows();
    let ident = DMatrix::<T>::identity(n, n);
    let at = a.transpose();
    let big = ident.kronecker(&at) + at.kronecker(&ident);
    let rhs = DVector::from_iterator(n * n, f.iter().map(|v| -*v));
    let sol = big.lu().solve(&rhs)?;
    Some(DMatrix::from_column_slice(n, n, sol.as_slice()))
}

/// Newton iteration for the matrix sign function with determinant scaling.
fn matrix_sign<T: Real>(mut z: DMatrix<T>) -> Result<DMatrix<T>> {
    let dim = z.nrows();
    let half = T::lit(0.5);
    let mut change = T::max_value().unwrap_or_else(|| T::lit(f64::MAX));
    for it in 0..SIGN_MAX_ITER {
        let det = z.clone().lu().determinant().abs();
        let inv = z
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::Contract("Hamiltonian has eigenvalues on the imaginary axis".into()))?;
        let c = if det > T::zero() && it < 10 {
            det.powf(-T::one() / T::from_usize(dim).unwrap())
        } else {
            T::one()
        };
        let next = (&z * c + inv / c) * half;
        change = (&next - &z).norm() / next.norm().max(T::one());
        z = next;
        if change < T::default_epsilon() * T::lit(100.0) {
            return Ok(z);
        }
    }
    if change < T::lit(1e-6) {
        Ok(z)
    } else {
        Err(Error::NonConvergence {
            what: "matrix sign iteration",
            iterations: SIGN_MAX_ITER,
            residual: change.to_f64_lossy(),
        })
    }
}
