//! Trace tables: one CSV row per record with columns
//! `t, x_1..x_n, u_1..u_m, J_1..J_M, delta_1..delta_M, residual_1..residual_M,
//! status, iters, solve_time_s`.

use std::io::{Read, Write};

use nalgebra::DVector;

use super::{SimulationTrace, StepRecord};
use crate::error::{Error, Result};
use crate::qp::QpStatus;
use crate::scalar::Real;

pub fn trace_header(state_dim: usize, input_dim: usize, task_count: usize) -> Vec<String> {
    let mut h = vec!["t".to_owned()];
    h.extend((1..=state_dim).map(|i| format!("x_{i}")));
    h.extend((1..=input_dim).map(|i| format!("u_{i}")));
    h.extend((1..=task_count).map(|i| format!("J_{i}")));
    h.extend((1..=task_count).map(|i| format!("delta_{i}")));
    h.extend((1..=task_count).map(|i| format!("residual_{i}")));
    h.extend(["status", "iters", "solve_time_s"].map(str::to_owned));
    h
}

fn status_name(s: QpStatus) -> &'static str {
    match s {
        QpStatus::Optimal => "optimal",
        QpStatus::Infeasible => "infeasible",
        QpStatus::MaxIter => "max_iter",
    }
}

fn parse_status(s: &str) -> Result<QpStatus> {
    match s {
        "optimal" => Ok(QpStatus::Optimal),
        "infeasible" => Ok(QpStatus::Infeasible),
        "max_iter" => Ok(QpStatus::MaxIter),
        other => Err(Error::Contract(format!("unknown solver status `{other}` in trace"))),
    }
}

pub fn write_trace_csv<T: Real, W: Write>(trace: &SimulationTrace<T>, w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(trace_header(trace.state_dim, trace.input_dim, trace.task_ids.len()))?;
    let num = |v: T| format!("{:?}", v.to_f64_lossy());
    for r in &trace.records {
        let mut row = vec![num(r.t)];
        for v in [&r.x, &r.u, &r.values, &r.delta, &r.residuals] {
            row.extend(v.iter().map(|&x| num(x)));
        }
        row.push(status_name(r.status).to_owned());
        row.push(r.iterations.to_string());
        row.push(format!("{:?}", r.solve_time_s));
        out.write_record(&row)?;
    }
    out.flush()?;
    Ok(())
}

fn count_prefix(header: &csv::StringRecord, prefix: &str) -> usize {
    header
        .iter()
        .filter(|h| h.strip_prefix(prefix).is_some_and(|rest| rest.parse::<usize>().is_ok()))
        .count()
}

/// Reads a trace written by [`write_trace_csv`]. Task ids become `T1..TM`;
/// active-set masks and dropped flags are not stored and come back empty.
pub fn read_trace_csv<R: Read>(r: R) -> Result<SimulationTrace<f64>> {
    let mut reader = csv::Reader::from_reader(r);
    let header = reader.headers()?.clone();
    let n = count_prefix(&header, "x_");
    let m = count_prefix(&header, "u_");
    let tasks = count_prefix(&header, "J_");
    let expected = trace_header(n, m, tasks);
    if header.iter().ne(expected.iter().map(String::as_str)) {
        return Err(Error::Contract(
            "trace header does not match the expected column layout".into(),
        ));
    }
    let mut records = Vec::new();
    for (line, row) in reader.records().enumerate() {
        let row = row?;
        let num = |i: usize| -> Result<f64> {
            row[i]
                .parse::<f64>()
                .map_err(|e| Error::Contract(format!("trace row {}: column {}: {e}", line + 1, expected[i])))
        };
        let vec = |start: usize, len: usize| -> Result<DVector<f64>> {
            Ok(DVector::from_vec((start..start + len).map(num).collect::<Result<_>>()?))
        };
        let mut c = 1;
        let x = vec(c, n)?;
        c += n;
        let u = vec(c, m)?;
        c += m;
        let values = vec(c, tasks)?;
        c += tasks;
        let delta = vec(c, tasks)?;
        c += tasks;
        let residuals = vec(c, tasks)?;
        c += tasks;
        records.push(StepRecord {
            t: num(0)?,
            x,
            u,
            values,
            delta,
            residuals,
            active: Vec::new(),
            dropped: vec![false; tasks],
            segment: 0,
            status: parse_status(&row[c])?,
            iterations: row[c + 1]
                .parse()
                .map_err(|e| Error::Contract(format!("trace row {}: iters: {e}", line + 1)))?,
            solve_time_s: num(c + 2)?,
        });
    }
    Ok(SimulationTrace {
        task_ids: (1..=tasks).map(|i| format!("T{i}")).collect(),
        state_dim: n,
        input_dim: m,
        records,
        failure: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_layout() {
        assert_eq!(
            trace_header(2, 1, 2),
            [
                "t",
                "x_1",
                "x_2",
                "u_1",
                "J_1",
                "J_2",
                "delta_1",
                "delta_2",
                "residual_1",
                "residual_2",
                "status",
                "iters",
                "solve_time_s"
            ]
        );
    }

    #[test]
    fn round_trip() {
        let rec = StepRecord {
            t: 0.01,
            x: DVector::from_vec(vec![1.0 / 3.0, -2.0]),
            u: DVector::from_vec(vec![0.1]),
            values: DVector::from_vec(vec![5.0]),
            delta: DVector::from_vec(vec![1e-17]),
            residuals: DVector::from_vec(vec![-0.5]),
            active: Vec::new(),
            dropped: vec![false],
            segment: 0,
            status: QpStatus::Optimal,
            iterations: 3,
            solve_time_s: 1.5e-5,
        };
        let trace = SimulationTrace {
            task_ids: vec!["T1".into()],
            state_dim: 2,
            input_dim: 1,
            records: vec![rec.clone(), StepRecord { t: 0.02, ..rec }],
            failure: None,
        };
        let mut buf = Vec::new();
        write_trace_csv(&trace, &mut buf).unwrap();
        let back = read_trace_csv(buf.as_slice()).unwrap();
        assert_eq!(back, trace);
    }

    #[test]
    fn rejects_bad_header() {
        assert!(read_trace_csv("a,b\n1,2\n".as_bytes()).is_err());
    }
}
