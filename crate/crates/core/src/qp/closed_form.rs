//! Closed-form solution of the stack QP when every row is active.
//!
//! With task rows `f̂0 + F̂u + σ − δ ≤ 0`, priority rows `Kδ ≥ 0` and cost
//! `‖u‖² + κ‖δ‖²`, the KKT system with all rows at equality reduces to
//!
//! ```text
//! [ I/κ + F̂F̂ᵀ   Kᵀ/κ ] [y1]   [f̂0 + σ]
//! [ K           KKᵀ  ] [y2] = [0     ]
//! ```
//!
//! with `u = −F̂ᵀy1`, `δ = (y1 + Kᵀy2)/κ` and multipliers `η = 2y`.

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, Error, Result};
use crate::scalar::Real;

#[derive(Clone, Debug, PartialEq)]
pub struct ClosedForm<T: Real> {
    pub u: DVector<T>,
    pub delta: DVector<T>,
    /// Multipliers of the task rows followed by those of the priority rows.
    pub eta: DVector<T>,
    /// 2-norm condition number of the reduced KKT matrix.
    pub condition: T,
}

fn kkt_matrix<T: Real>(f1hat: &DMatrix<T>, k: &DMatrix<T>, kappa: T) -> DMatrix<T> {
    let m = f1hat.nrows();
    let r = k.nrows();
    let inv_kappa = T::one() / kappa;
    let mut a = DMatrix::zeros(m + r, m + r);
    a.view_mut((0, 0), (m, m))
        .copy_from(&(DMatrix::identity(m, m) * inv_kappa + f1hat * f1hat.transpose()));
    a.view_mut((0, m), (m, r)).copy_from(&(k.transpose() * inv_kappa));
    a.view_mut((m, 0), (r, m)).copy_from(k);
    a.view_mut((m, m), (r, r)).copy_from(&(k * k.transpose()));
    a
}

fn check_shapes<T: Real>(f1hat: &DMatrix<T>, k: &DMatrix<T>, kappa: T) -> Result<()> {
    check_dim("priority matrix columns", f1hat.nrows(), k.ncols())?;
    if !(kappa > T::zero()) {
        return Err(Error::Contract(format!("slack weight must be positive, got {kappa}")));
    }
    Ok(())
}

fn invert_checked<T: Real>(a: DMatrix<T>) -> Result<(DMatrix<T>, T)> {
    let n = a.nrows();
    if n == 0 {
        return Ok((a, T::one()));
    }
    let sv = a.clone().singular_values();
    let max = sv.max();
    let min = sv.min();
    let cutoff = T::default_epsilon() * T::from_usize(n).unwrap() * T::lit(1e2) * max;
    if !(min > cutoff) {
        return Err(Error::SingularKkt(format!(
            "reduced KKT matrix is singular (singular values {min} .. {max})"
        )));
    }
    let inv = a
        .try_inverse()
        .ok_or_else(|| Error::SingularKkt("reduced KKT matrix could not be inverted".into()))?;
    Ok((inv, max / min))
}

/// All-rows-active solution; `Error::SingularKkt` when the reduced system is
/// singular, e.g. when the priority relations are linearly dependent.
pub fn closed_form_all_active<T: Real>(
    f0hat: &DVector<T>,
    f1hat: &DMatrix<T>,
    sigma: &DVector<T>,
    k: &DMatrix<T>,
    kappa: T,
) -> Result<ClosedForm<T>> {
    let m = f1hat.nrows();
    check_dim("drift terms", m, f0hat.len())?;
    check_dim("margins", m, sigma.len())?;
    check_shapes(f1hat, k, kappa)?;
    let r = k.nrows();
    let (inv, condition) = invert_checked(kkt_matrix(f1hat, k, kappa))?;
    let mut rhs = DVector::zeros(m + r);
    rhs.rows_mut(0, m).copy_from(&(f0hat + sigma));
    let y = inv * rhs;
    let y1 = y.rows(0, m).into_owned();
    let y2 = y.rows(m, r).into_owned();
    let u = -(f1hat.transpose() * &y1);
    let delta = (&y1 + k.transpose() * &y2) / kappa;
    Ok(ClosedForm {
        u,
        delta,
        eta: y * T::lit(2.0),
        condition,
    })
}

/// Closed-loop gain of the task values under the all-active solution,
/// `F̂F̂ᵀ [A⁻¹]₁₁`. Its eigenvalues have nonnegative real parts.
pub fn all_active_gain<T: Real>(f1hat: &DMatrix<T>, k: &DMatrix<T>, kappa: T) -> Result<DMatrix<T>> {
    check_shapes(f1hat, k, kappa)?;
    let m = f1hat.nrows();
    let (inv, _) = invert_checked(kkt_matrix(f1hat, k, kappa))?;
    Ok(f1hat * f1hat.transpose() * inv.view((0, 0), (m, m)))
}

/// Smallest real part among the eigenvalues of [`all_active_gain`].
pub fn all_active_gain_min_real_eigenvalue<T: Real>(f1hat: &DMatrix<T>, k: &DMatrix<T>, kappa: T) -> Result<T> {
    let g = all_active_gain(f1hat, k, kappa)?;
    if g.nrows() == 0 {
        return Ok(T::zero());
    }
    let eig = g.complex_eigenvalues();
    Ok(eig
        .iter()
        .fold(T::max_value().unwrap_or_else(|| T::lit(f64::MAX)), |m, c| m.min(c.re)))
}
