//! Plain-text grid value function artifact.
//!
//! ```text
//! taskstack-grid v1
//! dims <d>
//! lower <d numbers>
//! upper <d numbers>
//! resolution <d integers>
//! termination_radius <r>
//! dt <dt>
//! center <d numbers>
//! state_weight <d*d numbers, row-major>
//! input_weight <r>
//! input_dim <m>
//! actions <count>
//! <m numbers>            one line per action
//! values <node count>
//! <number>               one line per node, row-major (last axis fastest)
//! ```
//!
//! Numbers are written in shortest round-trip form, so `write_grid` followed
//! by `read_grid` reproduces an `f64` grid bit for bit.

use std::io::{BufRead, Write};

use nalgebra::{DMatrix, DVector};

use super::{GridAxes, GridValueFunction, QuadraticCost};
use crate::error::{Error, Result};
use crate::scalar::Real;

pub const ARTIFACT_MAGIC: &str = "taskstack-grid v1";

fn join<T: Real>(xs: impl IntoIterator<Item = T>) -> String {
    xs.into_iter()
        .map(|v| format!("{:?}", v.to_f64_lossy()))
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn write_grid<T: Real, W: Write>(gvf: &GridValueFunction<T>, mut w: W) -> Result<()> {
    let axes = gvf.axes();
    let cost = gvf.cost();
    writeln!(w, "{ARTIFACT_MAGIC}")?;
    writeln!(w, "dims {}", axes.dims())?;
    writeln!(w, "lower {}", join(axes.lower().iter().copied()))?;
    writeln!(w, "upper {}", join(axes.upper().iter().copied()))?;
    let res: Vec<String> = axes.resolution().iter().map(|r| r.to_string()).collect();
    writeln!(w, "resolution {}", res.join(" "))?;
    writeln!(w, "termination_radius {:?}", gvf.termination_radius().to_f64_lossy())?;
    writeln!(w, "dt {:?}", gvf.dt().to_f64_lossy())?;
    writeln!(w, "center {}", join(cost.center.iter().copied()))?;
    writeln!(
        w,
        "state_weight {}",
        join(cost.state_weight.transpose().iter().copied())
    )?;
    writeln!(w, "input_weight {:?}", cost.input_weight.to_f64_lossy())?;
    let m = gvf.actions().first().map_or(0, |a| a.len());
    writeln!(w, "input_dim {m}")?;
    writeln!(w, "actions {}", gvf.actions().len())?;
    for a in gvf.actions() {
        writeln!(w, "{}", join(a.iter().copied()))?;
    }
    writeln!(w, "values {}", gvf.values().len())?;
    for v in gvf.values() {
        writeln!(w, "{:?}", v.to_f64_lossy())?;
    }
    Ok(())
}

struct Lines<R> {
    inner: std::io::Lines<R>,
    line_no: usize,
}

impl<R: BufRead> Lines<R> {
    fn next_line(&mut self) -> Result<String> {
        self.line_no += 1;
        match self.inner.next() {
            Some(line) => Ok(line?),
            None => Err(Error::Artifact(format!(
                "unexpected end of file at line {}",
                self.line_no
            ))),
        }
    }

    fn keyed(&mut self, key: &str) -> Result<Vec<String>> {
        let line = self.next_line()?;
        let mut parts = line.split_whitespace();
        match parts.next() {
            Some(k) if k == key => Ok(parts.map(str::to_owned).collect()),
            other => Err(Error::Artifact(format!(
                "line {}: expected `{key}`, found `{}`",
                self.line_no,
                other.unwrap_or("")
            ))),
        }
    }

    fn numbers<T: Real>(&self, fields: &[String], expected: usize, what: &str) -> Result<Vec<T>> {
        if fields.len() != expected {
            return Err(Error::Artifact(format!(
                "line {}: `{what}` needs {expected} numbers, found {}",
                self.line_no,
                fields.len()
            )));
        }
        fields
            .iter()
            .map(|f| {
                f.parse::<f64>()
                    .map(T::lit)
                    .map_err(|e| Error::Artifact(format!("line {}: bad number `{f}`: {e}", self.line_no)))
            })
            .collect()
    }

    fn count(&self, fields: &[String], what: &str) -> Result<Vec<usize>> {
        fields
            .iter()
            .map(|f| {
                f.parse::<usize>()
                    .map_err(|e| Error::Artifact(format!("line {}: bad `{what}` `{f}`: {e}", self.line_no)))
            })
            .collect()
    }

    fn single_count(&mut self, key: &str) -> Result<usize> {
        let fields = self.keyed(key)?;
        let v = self.count(&fields, key)?;
        match v.as_slice() {
            [n] => Ok(*n),
            _ => Err(Error::Artifact(format!(
                "line {}: `{key}` takes one integer",
                self.line_no
            ))),
        }
    }

    fn single_number<T: Real>(&mut self, key: &str) -> Result<T> {
        let fields = self.keyed(key)?;
        Ok(self.numbers::<T>(&fields, 1, key)?[0])
    }
}

pub fn read_grid<T: Real, R: BufRead>(r: R) -> Result<GridValueFunction<T>> {
    let mut lines = Lines {
        inner: r.lines(),
        line_no: 0,
    };
    let magic = lines.next_line()?;
    if magic.trim() != ARTIFACT_MAGIC {
        return Err(Error::Artifact(format!("missing header `{ARTIFACT_MAGIC}`")));
    }
    let d = lines.single_count("dims")?;
    let f = lines.keyed("lower")?;
    let lower = lines.numbers::<T>(&f, d, "lower")?;
    let f = lines.keyed("upper")?;
    let upper = lines.numbers::<T>(&f, d, "upper")?;
    let f = lines.keyed("resolution")?;
    let resolution = lines.count(&f, "resolution")?;
    let axes = GridAxes::new(lower, upper, resolution)?;
    let radius = lines.single_number::<T>("termination_radius")?;
    let dt = lines.single_number::<T>("dt")?;
    let f = lines.keyed("center")?;
    let center = DVector::from_vec(lines.numbers::<T>(&f, d, "center")?);
    let f = lines.keyed("state_weight")?;
    let weight = DMatrix::from_row_slice(d, d, &lines.numbers::<T>(&f, d * d, "state_weight")?);
    let input_weight = lines.single_number::<T>("input_weight")?;
    let m = lines.single_count("input_dim")?;
    let n_actions = lines.single_count("actions")?;
    let mut actions = Vec::with_capacity(n_actions);
    for _ in 0..n_actions {
        let line = lines.next_line()?;
        let fields: Vec<String> = line.split_whitespace().map(str::to_owned).collect();
        actions.push(DVector::from_vec(lines.numbers::<T>(&fields, m, "action")?));
    }
    let n_values = lines.single_count("values")?;
    if n_values != axes.node_count() {
        return Err(Error::Artifact(format!(
            "value count {n_values} does not match grid node count {}",
            axes.node_count()
        )));
    }
    let mut values = Vec::with_capacity(n_values);
    for _ in 0..n_values {
        let line = lines.next_line()?;
        let fields = [line.trim().to_owned()];
        values.push(lines.numbers::<T>(&fields, 1, "value")?[0]);
    }
    let cost = QuadraticCost::new(weight, center, input_weight)?;
    GridValueFunction::new(axes, values, radius, dt, actions, cost)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> GridValueFunction<f64> {
        let axes = GridAxes::new(vec![-1.0, -2.0], vec![1.0, 2.0], vec![3, 4]).unwrap();
        let values = (0..12).map(|i| i as f64 / 3.0).collect();
        let actions = vec![DVector::from_element(1, -0.5), DVector::from_element(1, 0.5)];
        GridValueFunction::new(axes, values, 0.1, 0.05, actions, QuadraticCost::identity(2)).unwrap()
    }

    #[test]
    fn round_trip_is_exact() {
        let g = sample();
        let mut buf = Vec::new();
        write_grid(&g, &mut buf).unwrap();
        let back: GridValueFunction<f64> = read_grid(buf.as_slice()).unwrap();
        assert_eq!(back, g);
    }

    #[test]
    fn corrupted_artifacts_are_rejected() {
        let mut buf = Vec::new();
        write_grid(&sample(), &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();

        let truncated: String = text.lines().take(20).collect::<Vec<_>>().join("\n");
        assert!(read_grid::<f64, _>(truncated.as_bytes()).is_err());

        let bad_magic = text.replacen(ARTIFACT_MAGIC, "something else", 1);
        assert!(read_grid::<f64, _>(bad_magic.as_bytes()).is_err());

        let nan = text.replacen("values 12\n0.0", "values 12\nNaN", 1);
        assert!(matches!(read_grid::<f64, _>(nan.as_bytes()), Err(Error::Contract(_))));
    }
}
