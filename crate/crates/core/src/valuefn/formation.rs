//! Distance-based formation energy
//! `ℰ(x) = Σ_i Σ_{j ∈ N_i} (‖x_i - x_j‖² - W_ij²)²`.
//!
//! The double sum visits every edge twice (once from each endpoint); the
//! gradient below is consistent with that convention.

use nalgebra::{DMatrix, DVector};

use super::{Goal, ValueFunction};
use crate::error::{check_dim, Error, Result};
use crate::scalar::Real;

/// Desired inter-robot distances; `W_ij = 0` means no edge.
#[derive(Clone, Debug, PartialEq)]
pub struct FormationSpec<T: Real> {
    weights: DMatrix<T>,
    workspace_dim: usize,
}

impl<T: Real> FormationSpec<T> {
    pub fn new(weights: DMatrix<T>, workspace_dim: usize) -> Result<Self> {
        let n = weights.nrows();
        check_dim("formation weight matrix (square)", n, weights.ncols())?;
        if workspace_dim == 0 {
            return Err(Error::Contract("formation workspace dimension must be positive".into()));
        }
        for i in 0..n {
            if weights[(i, i)] != T::zero() {
                return Err(Error::Contract(format!("formation weight W[{i},{i}] must be zero")));
            }
            for j in 0..n {
                let w = weights[(i, j)];
                if !w.is_finite() || w < T::zero() {
                    return Err(Error::Contract(format!(
                        "formation weight W[{i},{j}] = {w} must be finite and nonnegative"
                    )));
                }
                if (w - weights[(j, i)]).abs() > T::default_epsilon() * T::lit(16.0) * (T::one() + w.abs()) {
                    return Err(Error::Contract(format!("formation weights not symmetric at ({i},{j})")));
                }
            }
        }
        Ok(Self { weights, workspace_dim })
    }

    /// Six planar robots on a regular hexagon of side `side`, numbered
    /// counter-clockwise; opposite vertices are at `2·side`, second neighbours at `√3·side`.
    pub fn hexagon(side: T) -> Self {
        let l = side;
        let s = T::lit(3f64.sqrt()) * side;
        let d = T::lit(2.0) * side;
        let z = T::zero();
        #[rustfmt::skip]
        let w = DMatrix::from_row_slice(6, 6, &[
            z, l, s, d, z, l,
            l, z, l, z, d, z,
            s, l, z, l, z, d,
            d, z, l, z, l, z,
            z, d, z, l, z, l,
            l, z, d, z, l, z,
        ]);
        Self::new(w, 2).expect("hexagon weights are valid")
    }

    pub fn weights(&self) -> &DMatrix<T> {
        &self.weights
    }

    pub fn robot_count(&self) -> usize {
        self.weights.nrows()
    }

    pub fn workspace_dim(&self) -> usize {
        self.workspace_dim
    }

    pub fn state_dim(&self) -> usize {
        self.robot_count() * self.workspace_dim
    }

    /// `N_i = { j : W_ij ≠ 0 }`.
    pub fn neighbors(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.robot_count()).filter(move |&j| self.weights[(i, j)] != T::zero())
    }
}

/// Vertex positions of the regular hexagon matching [`FormationSpec::hexagon`].
pub fn hexagon_vertices<T: Real>(side: T, center: [T; 2]) -> DVector<T> {
    let mut x = DVector::zeros(12);
    for k in 0..6 {
        let angle = T::lit(std::f64::consts::FRAC_PI_3 * k as f64);
        x[2 * k] = center[0] + side * angle.cos();
        x[2 * k + 1] = center[1] + side * angle.sin();
    }
    x
}

fn edge_terms<T: Real>(
    x: &DVector<T>,
    spec: &FormationSpec<T>,
    mut visit: impl FnMut(usize, usize, T, DVector<T>),
) -> Result<()> {
    check_dim("formation ensemble state", spec.state_dim(), x.len())?;
    let d = spec.workspace_dim;
    for i in 0..spec.robot_count() {
        let xi = x.rows(i * d, d);
        for j in spec.neighbors(i) {
            let diff = xi - x.rows(j * d, d);
            let w = spec.weights[(i, j)];
            visit(i, j, diff.norm_squared() - w * w, diff);
        }
    }
    Ok(())
}

pub fn formation_energy<T: Real>(x: &DVector<T>, spec: &FormationSpec<T>) -> Result<T> {
    let mut e = T::zero();
    edge_terms(x, spec, |_, _, gap, _| e += gap * gap)?;
    Ok(e)
}

/// `∂ℰ/∂x_i = Σ_{j ∈ N_i} 8 (‖x_i - x_j‖² - W_ij²)(x_i - x_j)`.
pub fn formation_energy_gradient<T: Real>(x: &DVector<T>, spec: &FormationSpec<T>) -> Result<DVector<T>> {
    let d = spec.workspace_dim;
    let mut g = DVector::zeros(x.len());
    let eight = T::lit(8.0);
    edge_terms(x, spec, |i, _, gap, diff| {
        let mut block = g.rows_mut(i * d, d);
        block += diff * (eight * gap);
    })?;
    Ok(g)
}

/// Formation task: `J = c_E ℰ(x)` with stage cost `q = c_q ℰ(x)`.
#[derive(Clone, Debug)]
pub struct FormationValue<T: Real> {
    spec: FormationSpec<T>,
    energy_weight: T,
    cost_weight: T,
}

impl<T: Real> FormationValue<T> {
    pub fn new(spec: FormationSpec<T>, energy_weight: T, cost_weight: T) -> Result<Self> {
        if !(energy_weight > T::zero()) || !(cost_weight >= T::zero()) {
            return Err(Error::Contract(format!(
                "formation weights must satisfy c_E > 0, c_q >= 0 (got {energy_weight}, {cost_weight})"
            )));
        }
        Ok(Self {
            spec,
            energy_weight,
            cost_weight,
        })
    }

    pub fn spec(&self) -> &FormationSpec<T> {
        &self.spec
    }
}

impl<T: Real> ValueFunction<T> for FormationValue<T> {
    fn dim(&self) -> usize {
        self.spec.state_dim()
    }

    fn value(&self, x: &DVector<T>) -> T {
        self.energy_weight * formation_energy(x, &self.spec).expect("dimension validated by caller")
    }

    fn gradient(&self, x: &DVector<T>) -> DVector<T> {
        formation_energy_gradient(x, &self.spec).expect("dimension validated by caller") * self.energy_weight
    }

    fn stage_cost(&self, x: &DVector<T>) -> T {
        self.cost_weight * formation_energy(x, &self.spec).expect("dimension validated by caller")
    }

    fn goal(&self) -> Goal<T> {
        Goal::Set("formation".into())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::valuefn::finite_difference_gradient;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn hexagon_has_zero_energy() {
        let spec = FormationSpec::<f64>::hexagon(1.0);
        let x = hexagon_vertices(1.0, [0.0, 0.0]);
        assert!(formation_energy(&x, &spec).unwrap() < 1e-24);
        assert!(formation_energy_gradient(&x, &spec).unwrap().norm() < 1e-12);
        let shifted = hexagon_vertices(1.0, [3.0, -2.0]);
        assert!(formation_energy(&shifted, &spec).unwrap() < 1e-24);
    }

    #[test]
    fn two_robot_edge_counted_twice() {
        let w = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        let spec = FormationSpec::new(w, 2).unwrap();
        let x = DVector::from_column_slice(&[0.0, 0.0, 2.0, 0.0]);
        assert_eq!(formation_energy(&x, &spec).unwrap(), 18.0);
    }

    #[test]
    fn energy_is_translation_invariant() {
        let spec = FormationSpec::<f64>::hexagon(1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = DVector::from_fn(12, |_, _| rng.random_range(-2.0..2.0));
        let offset = [0.7, -1.3];
        let y = DVector::from_fn(12, |i, _| x[i] + offset[i % 2]);
        let (ex, ey) = (
            formation_energy(&x, &spec).unwrap(),
            formation_energy(&y, &spec).unwrap(),
        );
        assert!((ex - ey).abs() <= 1e-10 * ex.max(1.0));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let spec = FormationSpec::<f64>::hexagon(1.0);
        let provider = FormationValue::new(spec, 0.01, 0.01).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let x = DVector::from_fn(12, |_, _| rng.random_range(-2.0..2.0));
            let g = provider.gradient(&x);
            let fd = finite_difference_gradient(|y: &DVector<f64>| provider.value(y), &x, 1e-5);
            assert!((&g - &fd).norm() <= 1e-5 * g.norm().max(1e-8), "{g} vs {fd}");
        }
    }

    #[test]
    fn scaled_hexagon_is_penalized() {
        let provider = FormationValue::new(FormationSpec::hexagon(1.0), 0.01, 0.01).unwrap();
        assert!(provider.value(&(hexagon_vertices(1.0, [0.0, 0.0]) * 2.0)) > 0.0);
    }

    #[test]
    fn invalid_weights_rejected() {
        let asym = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 2.0, 0.0]);
        assert!(FormationSpec::<f64>::new(asym, 2).is_err());
        let diag = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 0.0]);
        assert!(FormationSpec::<f64>::new(diag, 2).is_err());
        let neg = DMatrix::from_row_slice(2, 2, &[0.0, -1.0, -1.0, 0.0]);
        assert!(FormationSpec::<f64>::new(neg, 2).is_err());
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let spec = FormationSpec::<f64>::hexagon(1.0);
        assert!(matches!(
            formation_energy(&DVector::zeros(10), &spec),
            Err(Error::Dimension { .. })
        ));
    }
}
