//! SVG charts of simulation traces and controller comparisons. Rendering only
//! reads its inputs.

use std::ops::Range;
use std::path::Path;

use plotters::prelude::*;

use crate::comparison::ComparisonReport;
use crate::error::{Error, Result};
use crate::sim::SimulationTrace;

const SIZE: (u32, u32) = (960, 600);
/// Log-scale floor for task values that reach zero.
const LOG_FLOOR: f64 = 1e-10;

fn artifact<E: std::fmt::Display>(path: &Path) -> impl Fn(E) -> Error + '_ {
    move |e| Error::Artifact(format!("{}: {e}", path.display()))
}

fn color(i: usize) -> RGBColor {
    const PALETTE: [RGBColor; 8] = [
        RGBColor(31, 119, 180),
        RGBColor(255, 127, 14),
        RGBColor(44, 160, 44),
        RGBColor(214, 39, 40),
        RGBColor(148, 103, 189),
        RGBColor(140, 86, 75),
        RGBColor(227, 119, 194),
        RGBColor(127, 127, 127),
    ];
    PALETTE[i % PALETTE.len()]
}

fn padded(lo: f64, hi: f64) -> Range<f64> {
    let (lo, hi) = if lo.is_finite() && hi.is_finite() {
        (lo, hi)
    } else {
        (0.0, 1.0)
    };
    let pad = ((hi - lo) * 0.05).max(1e-9);
    lo - pad..hi + pad
}

fn time_range(trace: &SimulationTrace<f64>) -> Result<Range<f64>> {
    match (trace.records.first(), trace.records.last()) {
        (Some(a), Some(b)) if b.t > a.t => Ok(a.t..b.t),
        _ => Err(Error::Artifact("trace needs at least two records to plot".into())),
    }
}

/// Task values against time on a log axis, with dashed lines at the
/// schedule switch times in `boundaries`.
pub fn plot_values(trace: &SimulationTrace<f64>, boundaries: &[f64], path: &Path) -> Result<()> {
    let err = artifact(path);
    let times = time_range(trace)?;
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for r in &trace.records {
        for &v in r.values.iter() {
            lo = lo.min(v.max(LOG_FLOOR));
            hi = hi.max(v.max(LOG_FLOOR));
        }
    }
    let root = SVGBackend::new(path, SIZE).into_drawing_area();
    root.fill(&WHITE).map_err(&err)?;
    let mut chart = ChartBuilder::on(&root)
        .caption(format!("{}: task values", trace_title(trace)), ("sans-serif", 20))
        .margin(10)
        .x_label_area_size(40)
        .y_label_area_size(70)
        .build_cartesian_2d(times.clone(), (lo / 2.0..hi * 2.0).log_scale())
        .map_err(&err)?;
    chart
        .configure_mesh()
        .x_desc("t [s]")
        .y_desc("J")
        .draw()
        .map_err(&err)?;
    for &b in boundaries.iter().filter(|b| times.contains(b)) {
        chart
            .draw_series(DashedLineSeries::new(
                [(b, lo / 2.0), (b, hi * 2.0)],
                6,
                4,
                BLACK.mix(0.5).into(),
            ))
            .map_err(&err)?;
    }
    for (i, id) in trace.task_ids.iter().enumerate() {
        let c = color(i);
        chart
            .draw_series(LineSeries::new(
                trace.records.iter().map(|r| (r.t, r.values[i].max(LOG_FLOOR))),
                c.stroke_width(2),
            ))
            .map_err(&err)?
            .label(id.clone())
            .legend(move |(x, y)| PathElement::new([(x, y), (x + 20, y)], c.stroke_width(2)));
    }
    chart
        .configure_series_labels()
        .border_style(BLACK)
        .background_style(WHITE.mix(0.8))
        .draw()
        .map_err(&err)?;
    root.present().map_err(&err)
}

/// Planar paths of `robots` robots whose positions are consecutive pairs of
/// state coordinates. Start points are hollow, end points filled.
pub fn plot_trajectories(trace: &SimulationTrace<f64>, robots: usize, path: &Path) -> Result<()> {
    let err = artifact(path);
    if robots == 0 || trace.state_dim < 2 * robots {
        return Err(Error::Artifact(format!(
            "state dimension {} cannot hold {robots} planar robots",
            trace.state_dim
        )));
    }
    time_range(trace)?;
    let (mut x_lo, mut x_hi, mut y_lo, mut y_hi) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for r in &trace.records {
        for k in 0..robots {
            x_lo = x_lo.min(r.x[2 * k]);
            x_hi = x_hi.max(r.x[2 * k]);
            y_lo = y_lo.min(r.x[2 * k + 1]);
            y_hi = y_hi.max(r.x[2 * k + 1]);
        }
    }
    // equal aspect
    let half = ((x_hi - x_lo).max(y_hi - y_lo) / 2.0) * 1.05 + 1e-9;
    let (cx, cy) = ((x_lo + x_hi) / 2.0, (y_lo + y_hi) / 2.0);
    let root = SVGBackend::new(path, (720, 720)).into_drawing_area();
    root.fill(&WHITE).map_err(&err)?;
    let mut chart = ChartBuilder::on(&root)
        .caption(format!("{}: robot paths", trace_title(trace)), ("sans-serif", 20))
        .margin(10)
        .x_label_area_size(40)
        .y_label_area_size(50)
        .build_cartesian_2d(cx - half..cx + half, cy - half..cy + half)
        .map_err(&err)?;
    chart.configure_mesh().x_desc("x").y_desc("y").draw().map_err(&err)?;
    let first = &trace.records[0];
    let last = trace.records.last().expect("checked above");
    for k in 0..robots {
        let c = color(k);
        chart
            .draw_series(LineSeries::new(
                trace.records.iter().map(|r| (r.x[2 * k], r.x[2 * k + 1])),
                c.stroke_width(2),
            ))
            .map_err(&err)?
            .label(format!("robot {}", k + 1))
            .legend(move |(x, y)| PathElement::new([(x, y), (x + 20, y)], c.stroke_width(2)));
        chart
            .draw_series([
                Circle::new((first.x[2 * k], first.x[2 * k + 1]), 5, c.stroke_width(2)),
                Circle::new((last.x[2 * k], last.x[2 * k + 1]), 5, c.filled()),
            ])
            .map_err(&err)?;
    }
    chart
        .configure_series_labels()
        .border_style(BLACK)
        .background_style(WHITE.mix(0.8))
        .draw()
        .map_err(&err)?;
    root.present().map_err(&err)
}

/// Every state coordinate against time.
pub fn plot_states(trace: &SimulationTrace<f64>, path: &Path) -> Result<()> {
    let err = artifact(path);
    let times = time_range(trace)?;
    let (lo, hi) = trace
        .records
        .iter()
        .flat_map(|r| r.x.iter().copied())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    let root = SVGBackend::new(path, SIZE).into_drawing_area();
    root.fill(&WHITE).map_err(&err)?;
    let mut chart = ChartBuilder::on(&root)
        .caption(format!("{}: states", trace_title(trace)), ("sans-serif", 20))
        .margin(10)
        .x_label_area_size(40)
        .y_label_area_size(60)
        .build_cartesian_2d(times, padded(lo, hi))
        .map_err(&err)?;
    chart
        .configure_mesh()
        .x_desc("t [s]")
        .y_desc("x")
        .draw()
        .map_err(&err)?;
    for i in 0..trace.state_dim {
        let c = color(i);
        chart
            .draw_series(LineSeries::new(
                trace.records.iter().map(|r| (r.t, r.x[i])),
                c.stroke_width(2),
            ))
            .map_err(&err)?
            .label(format!("x_{}", i + 1))
            .legend(move |(x, y)| PathElement::new([(x, y), (x + 20, y)], c.stroke_width(2)));
    }
    chart
        .configure_series_labels()
        .border_style(BLACK)
        .background_style(WHITE.mix(0.8))
        .draw()
        .map_err(&err)?;
    root.present().map_err(&err)
}

/// First input coordinate of every controller run against time.
pub fn plot_comparison(report: &ComparisonReport<f64>, path: &Path) -> Result<()> {
    let err = artifact(path);
    let t_hi = report
        .runs
        .iter()
        .filter_map(|r| r.times.last().copied())
        .fold(0.0, f64::max);
    if t_hi <= 0.0 {
        return Err(Error::Artifact("comparison has no samples to plot".into()));
    }
    let (lo, hi) = report
        .runs
        .iter()
        .flat_map(|r| r.inputs.iter().map(|u| u[0]))
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    let root = SVGBackend::new(path, SIZE).into_drawing_area();
    root.fill(&WHITE).map_err(&err)?;
    let mut chart = ChartBuilder::on(&root)
        .caption("controller comparison", ("sans-serif", 20))
        .margin(10)
        .x_label_area_size(40)
        .y_label_area_size(60)
        .build_cartesian_2d(0.0..t_hi, padded(lo, hi))
        .map_err(&err)?;
    chart
        .configure_mesh()
        .x_desc("t [s]")
        .y_desc("u")
        .draw()
        .map_err(&err)?;
    for (i, run) in report.runs.iter().enumerate() {
        let c = color(i);
        let style = if i == 0 { c.stroke_width(4) } else { c.stroke_width(2) };
        chart
            .draw_series(LineSeries::new(
                run.times.iter().zip(&run.inputs).map(|(&t, u)| (t, u[0])),
                style,
            ))
            .map_err(&err)?
            .label(run.name.clone())
            .legend(move |(x, y)| PathElement::new([(x, y), (x + 20, y)], style));
    }
    chart
        .configure_series_labels()
        .border_style(BLACK)
        .background_style(WHITE.mix(0.8))
        .draw()
        .map_err(&err)?;
    root.present().map_err(&err)
}

fn trace_title(trace: &SimulationTrace<f64>) -> String {
    format!("{} tasks, {} records", trace.task_ids.len(), trace.records.len())
}
