//! Value functions tabulated on a regular grid and read out by multilinear
//! interpolation. Node values are stored row-major (last axis fastest).

use nalgebra::DVector;

use super::{Goal, QuadraticCost, ValueFunction};
use crate::error::{check_dim, Error, Result};
use crate::scalar::Real;

/// Regular axis-aligned grid.
#[derive(Clone, Debug, PartialEq)]
pub struct GridAxes<T: Real> {
    lower: Vec<T>,
    upper: Vec<T>,
    resolution: Vec<usize>,
    strides: Vec<usize>,
}

impl<T: Real> GridAxes<T> {
    pub fn new(lower: Vec<T>, upper: Vec<T>, resolution: Vec<usize>) -> Result<Self> {
        let d = lower.len();
        if d == 0 {
            return Err(Error::Contract("grid needs at least one axis".into()));
        }
        check_dim("grid upper bounds", d, upper.len())?;
        check_dim("grid resolution", d, resolution.len())?;
        for k in 0..d {
            if !(lower[k] < upper[k]) {
                return Err(Error::Contract(format!(
                    "grid axis {k}: lower bound must be below upper bound"
                )));
            }
            if resolution[k] < 2 {
                return Err(Error::Contract(format!("grid axis {k}: need at least 2 points")));
            }
        }
        let mut strides = vec![1; d];
        for k in (0..d - 1).rev() {
            strides[k] = strides[k + 1] * resolution[k + 1];
        }
        Ok(Self {
            lower,
            upper,
            resolution,
            strides,
        })
    }

    pub fn dims(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[T] {
        &self.lower
    }

    pub fn upper(&self) -> &[T] {
        &self.upper
    }

    pub fn resolution(&self) -> &[usize] {
        &self.resolution
    }

    pub fn node_count(&self) -> usize {
        self.resolution.iter().product()
    }

    pub fn spacing(&self, axis: usize) -> T {
        (self.upper[axis] - self.lower[axis]) / T::from_usize(self.resolution[axis] - 1).unwrap()
    }

    fn coordinate(&self, axis: usize, i: usize) -> T {
        if i + 1 == self.resolution[axis] {
            return self.upper[axis];
        }
        let frac = T::from_usize(i).unwrap() / T::from_usize(self.resolution[axis] - 1).unwrap();
        self.lower[axis] + (self.upper[axis] - self.lower[axis]) * frac
    }

    /// Coordinates of the node with flat (row-major) index `flat`.
    pub fn node(&self, flat: usize) -> DVector<T> {
        DVector::from_fn(self.dims(), |k, _| {
            let i = (flat / self.strides[k]) % self.resolution[k];
            self.coordinate(k, i)
        })
    }

    /// Clamps `x` into the box; the flag is set when any coordinate moved.
    pub fn clamp(&self, x: &DVector<T>) -> (DVector<T>, bool) {
        let mut out = false;
        let y = DVector::from_fn(self.dims(), |k, _| {
            let v = x[k];
            if v < self.lower[k] {
                out = true;
                self.lower[k]
            } else if v > self.upper[k] {
                out = true;
                self.upper[k]
            } else {
                v
            }
        });
        (y, out)
    }

    /// Multilinear interpolation stencil: `(flat index, weight)` pairs for
    /// the `2^d` cell corners around the clamped point, plus the
    /// out-of-domain flag.
    pub fn stencil(&self, x: &DVector<T>) -> (Vec<(usize, T)>, bool) {
        let d = self.dims();
        let mut out = false;
        let mut base = 0;
        let mut fracs = Vec::with_capacity(d);
        for k in 0..d {
            let cells = self.resolution[k] - 1;
            let span = self.upper[k] - self.lower[k];
            let mut s = (x[k] - self.lower[k]) / span * T::from_usize(cells).unwrap();
            let top = T::from_usize(cells).unwrap();
            if !(s >= T::zero()) {
                out |= s < T::zero();
                s = T::zero();
            } else if s > top {
                out = true;
                s = top;
            }
            // snap to the node so that node queries reproduce stored values exactly
            let nearest = s.round();
            if (s - nearest).abs() <= T::default_epsilon() * T::lit(64.0) * (T::one() + top) {
                s = nearest;
            }
            let i = s.floor().to_usize().unwrap_or(0).min(cells - 1);
            let f = s - T::from_usize(i).unwrap();
            base += i * self.strides[k];
            fracs.push(f);
        }
        let corners = 1usize << d;
        let mut stencil = Vec::with_capacity(corners);
        for mask in 0..corners {
            let mut w = T::one();
            let mut idx = base;
            for (k, &f) in fracs.iter().enumerate() {
                if mask & (1 << k) != 0 {
                    w *= f;
                    idx += self.strides[k];
                } else {
                    w *= T::one() - f;
                }
            }
            if w != T::zero() {
                stencil.push((idx, w));
            }
        }
        (stencil, out)
    }

    /// Interpolates `values` (one per node) at `x`.
    pub fn interpolate(&self, values: &[T], x: &DVector<T>) -> (T, bool) {
        let (stencil, out) = self.stencil(x);
        let v = stencil.iter().fold(T::zero(), |acc, &(i, w)| acc + w * values[i]);
        (v, out)
    }
}

/// Tabulated value function produced by value iteration, together with the
/// metadata needed to reuse it (step, action set, running cost).
#[derive(Clone, Debug, PartialEq)]
pub struct GridValueFunction<T: Real> {
    axes: GridAxes<T>,
    values: Vec<T>,
    termination_radius: T,
    dt: T,
    actions: Vec<DVector<T>>,
    cost: QuadraticCost<T>,
}

impl<T: Real> GridValueFunction<T> {
    pub fn new(
        axes: GridAxes<T>,
        values: Vec<T>,
        termination_radius: T,
        dt: T,
        actions: Vec<DVector<T>>,
        cost: QuadraticCost<T>,
    ) -> Result<Self> {
        check_dim("grid values", axes.node_count(), values.len())?;
        check_dim("grid cost dimension", axes.dims(), cost.dim())?;
        if let Some((i, v)) = values
            .iter()
            .enumerate()
            .find(|(_, v)| !v.is_finite() || **v < T::zero())
        {
            return Err(Error::Contract(format!(
                "grid value at node {i} is {v}; values must be finite and nonnegative"
            )));
        }
        if !(termination_radius >= T::zero()) {
            return Err(Error::Contract("termination radius must be nonnegative".into()));
        }
        Ok(Self {
            axes,
            values,
            termination_radius,
            dt,
            actions,
            cost,
        })
    }

    pub fn axes(&self) -> &GridAxes<T> {
        &self.axes
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn termination_radius(&self) -> T {
        self.termination_radius
    }

    pub fn dt(&self) -> T {
        self.dt
    }

    pub fn actions(&self) -> &[DVector<T>] {
        &self.actions
    }

    pub fn cost(&self) -> &QuadraticCost<T> {
        &self.cost
    }

    /// Interpolated value; the flag reports a query outside the grid box (clamped).
    pub fn eval(&self, x: &DVector<T>) -> (T, bool) {
        self.axes.interpolate(&self.values, x)
    }

    /// Central differences with one grid spacing per axis, evaluated on the
    /// clamped stencil so the quotient uses the true distance near the boundary.
    pub fn gradient_at(&self, x: &DVector<T>) -> DVector<T> {
        let (x, _) = self.axes.clamp(x);
        DVector::from_fn(self.axes.dims(), |k, _| {
            let h = self.axes.spacing(k);
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[k] = (x[k] + h).min(self.axes.upper[k]);
            xm[k] = (x[k] - h).max(self.axes.lower[k]);
            let (vp, _) = self.eval(&xp);
            let (vm, _) = self.eval(&xm);
            (vp - vm) / (xp[k] - xm[k])
        })
    }

    /// Subtracts the interpolated value at `x_term` from every node. Values
    /// that end up in `[-tol, 0)` are clamped to zero; anything lower is an error.
    pub fn shift_to_zero(&self, x_term: &DVector<T>, tol: T) -> Result<Self> {
        check_dim("shift point", self.axes.dims(), x_term.len())?;
        let (offset, out) = self.eval(x_term);
        if out {
            return Err(Error::Contract("shift point lies outside the grid".into()));
        }
        let mut values = Vec::with_capacity(self.values.len());
        for (i, v) in self.values.iter().enumerate() {
            let s = *v - offset;
            if s < -tol {
                return Err(Error::Contract(format!(
                    "node {i} drops to {s} after shifting; the value function has a minimum below the shift point"
                )));
            }
            values.push(if s < T::zero() { T::zero() } else { s });
        }
        Ok(Self { values, ..self.clone() })
    }
}

impl<T: Real> ValueFunction<T> for GridValueFunction<T> {
    fn dim(&self) -> usize {
        self.axes.dims()
    }

    fn value(&self, x: &DVector<T>) -> T {
        let (v, out) = self.eval(x);
        if out {
            log::trace!("grid value queried outside its domain");
        }
        v
    }

    fn gradient(&self, x: &DVector<T>) -> DVector<T> {
        self.gradient_at(x)
    }

    fn stage_cost(&self, x: &DVector<T>) -> T {
        self.cost.state_cost(x)
    }

    fn goal(&self) -> Goal<T> {
        Goal::Point(self.cost.center.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn axes() -> GridAxes<f64> {
        GridAxes::new(vec![-1.0, 0.0], vec![1.0, 2.0], vec![5, 9]).unwrap()
    }

    fn gvf(values: Vec<f64>) -> GridValueFunction<f64> {
        GridValueFunction::new(axes(), values, 0.1, 0.05, vec![], QuadraticCost::identity(2)).unwrap()
    }

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(xs)
    }

    #[test]
    fn node_queries_are_exact() {
        let a = axes();
        let values: Vec<f64> = (0..a.node_count()).map(|i| ((i * 37) % 11) as f64 * 0.3).collect();
        let g = gvf(values.clone());
        for (i, &expected) in values.iter().enumerate() {
            let (val, out) = g.eval(&a.node(i));
            assert!(!out);
            assert_eq!(val, expected, "node {i}");
        }
    }

    #[test]
    fn linear_fields_are_reproduced() {
        let a = axes();
        let f = |x: &DVector<f64>| 3.0 + 2.0 * x[0] + 0.5 * x[1];
        let g = gvf((0..a.node_count()).map(|i| f(&a.node(i))).collect());
        let x = v(&[0.13, 1.37]);
        assert_relative_eq!(g.eval(&x).0, f(&x), epsilon = 1e-13);
        assert_relative_eq!(g.gradient_at(&x), v(&[2.0, 0.5]), epsilon = 1e-12);
        // one-sided near the edge still exact
        assert_relative_eq!(g.gradient_at(&v(&[0.99, 0.01])), v(&[2.0, 0.5]), epsilon = 1e-12);
    }

    #[test]
    fn outside_queries_are_clamped_and_flagged() {
        let a = axes();
        let g = gvf((0..a.node_count()).map(|i| a.node(i)[0] + 1.0).collect());
        let (val, out) = g.eval(&v(&[5.0, 1.0]));
        assert!(out);
        assert_relative_eq!(val, 2.0, epsilon = 1e-14);
        assert!(!g.eval(&v(&[1.0, 2.0])).1);
    }

    #[test]
    fn nan_values_rejected() {
        let mut values = vec![0.0; axes().node_count()];
        values[3] = f64::NAN;
        assert!(GridValueFunction::new(axes(), values, 0.1, 0.05, vec![], QuadraticCost::identity(2)).is_err());
    }

    #[test]
    fn shift_constant_to_zero() {
        let g = gvf(vec![5.0; axes().node_count()])
            .shift_to_zero(&v(&[0.0, 1.0]), 1e-9)
            .unwrap();
        assert!(g.values().iter().all(|&x| x == 0.0));
        let z = gvf(vec![0.0; axes().node_count()]);
        assert_eq!(z.shift_to_zero(&v(&[0.0, 1.0]), 1e-9).unwrap(), z);
    }

    #[test]
    fn shift_at_minimum_and_below_minimum() {
        let a = axes();
        let f = |x: &DVector<f64>| 1.0 + x[0] * x[0] + (x[1] - 1.0).powi(2);
        let g = gvf((0..a.node_count()).map(|i| f(&a.node(i))).collect());
        let shifted = g.shift_to_zero(&v(&[0.0, 1.0]), 1e-9).unwrap();
        assert_eq!(shifted.eval(&v(&[0.0, 1.0])).0, 0.0);
        assert!(g.shift_to_zero(&v(&[1.0, 2.0]), 1e-9).is_err());
    }

    #[test]
    fn bad_axes_rejected() {
        assert!(GridAxes::<f64>::new(vec![0.0], vec![0.0], vec![3]).is_err());
        assert!(GridAxes::<f64>::new(vec![0.0], vec![1.0], vec![1]).is_err());
        assert!(GridAxes::<f64>::new(vec![0.0, 1.0], vec![1.0], vec![3]).is_err());
    }
}
