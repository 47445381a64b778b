use std::collections::BTreeMap;
use std::path::Path;

use plotters::coord::ranged1d::{AsRangedCoord, ValueFormatter};
use plotters::prelude::*;

use super::report::ScalingReport;
use super::BenchError;

type Series = Vec<(String, Vec<(f64, f64)>)>;

fn padded(lo: f64, hi: f64, log: bool) -> (f64, f64) {
    if log {
        let lo = if lo > 0.0 { lo } else { 1e-9 };
        (lo / 1.5, (hi.max(lo)) * 1.5)
    } else if hi > lo {
        let pad = (hi - lo) * 0.05;
        (lo - pad, hi + pad)
    } else {
        (lo - 1.0, hi + 1.0)
    }
}

fn draw<X, Y>(path: &Path, title: &str, x_label: &str, y_label: &str, series: &Series, xr: X, yr: Y) -> Result<(), String>
where
    X: AsRangedCoord<Value = f64>,
    Y: AsRangedCoord<Value = f64>,
    X::CoordDescType: ValueFormatter<f64>,
    Y::CoordDescType: ValueFormatter<f64>,
{
    let root = SVGBackend::new(path, (800, 520)).into_drawing_area();
    root.fill(&WHITE).map_err(|e| e.to_string())?;
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 20))
        .margin(16)
        .x_label_area_size(44)
        .y_label_area_size(72)
        .build_cartesian_2d(xr, yr)
        .map_err(|e| e.to_string())?;
    chart
        .configure_mesh()
        .x_desc(x_label)
        .y_desc(y_label)
        .draw()
        .map_err(|e| e.to_string())?;
    for (i, (name, pts)) in series.iter().enumerate() {
        let color = Palette99::pick(i).to_rgba();
        chart
            .draw_series(LineSeries::new(pts.iter().copied(), color.stroke_width(2)))
            .map_err(|e| e.to_string())?
            .label(name.clone())
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 18, y)], color.stroke_width(2)));
        chart
            .draw_series(pts.iter().map(|&p| Circle::new(p, 3, color.filled())))
            .map_err(|e| e.to_string())?;
    }
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.8))
        .border_style(BLACK)
        .draw()
        .map_err(|e| e.to_string())?;
    root.present().map_err(|e| e.to_string())
}

/// Line chart of `series` with optional log axes.
pub fn line_chart(
    path: &Path,
    title: &str,
    x_label: &str,
    y_label: &str,
    series: &Series,
    log_x: bool,
    log_y: bool,
) -> Result<(), BenchError> {
    let all: Vec<(f64, f64)> = series.iter().flat_map(|(_, p)| p.iter().copied()).collect();
    if all.is_empty() {
        return Err(BenchError::Report(format!("{}: nothing to plot", path.display())));
    }
    let fold = |f: fn(&(f64, f64)) -> f64| {
        all.iter().map(f).fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
    };
    let (x0, x1) = fold(|p| p.0);
    let (y0, y1) = fold(|p| p.1);
    let (x0, x1) = padded(x0, x1, log_x);
    let (y0, y1) = padded(y0, y1, log_y);
    let result = match (log_x, log_y) {
        (false, false) => draw(path, title, x_label, y_label, series, x0..x1, y0..y1),
        (true, false) => draw(path, title, x_label, y_label, series, (x0..x1).log_scale(), y0..y1),
        (false, true) => draw(path, title, x_label, y_label, series, x0..x1, (y0..y1).log_scale()),
        (true, true) => draw(path, title, x_label, y_label, series, (x0..x1).log_scale(), (y0..y1).log_scale()),
    };
    result.map_err(|e| BenchError::Report(format!("{}: {e}", path.display())))
}

/// Writes `time.svg` (seconds per call) and `throughput.svg` (MB/s) for the
/// report's components against the sweep variable.
pub fn plot_report(report: &ScalingReport, dir: &Path) -> Result<(), BenchError> {
    let mut time: BTreeMap<&str, Vec<(f64, f64)>> = BTreeMap::new();
    let mut rate: BTreeMap<&str, Vec<(f64, f64)>> = BTreeMap::new();
    for p in report.points.iter().filter(|p| p.ok) {
        for c in &report.components {
            if let Some(s) = p.components.get(c) {
                time.entry(c).or_default().push((p.x, s.op_mean_sec));
                if s.throughput_mbs > 0.0 {
                    rate.entry(c).or_default().push((p.x, s.throughput_mbs));
                }
            }
        }
    }
    let owned = |m: BTreeMap<&str, Vec<(f64, f64)>>| -> Series {
        m.into_iter().map(|(k, v)| (k.to_owned(), v)).collect()
    };
    let title = format!("{} {}", report.id, report.title);
    line_chart(
        &dir.join("time.svg"),
        &title,
        &report.x_label,
        "seconds per call",
        &owned(time),
        report.log_x,
        report.log_y,
    )?;
    let rate = owned(rate);
    if !rate.is_empty() {
        line_chart(
            &dir.join("throughput.svg"),
            &title,
            &report.x_label,
            "throughput (MB/s)",
            &rate,
            report.log_x,
            report.log_y,
        )?;
    }
    Ok(())
}
