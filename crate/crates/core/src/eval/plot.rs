use std::path::{Path, PathBuf};

use plotters::prelude::*;

use super::report::{EvalReport, Protocol};
use crate::error::{Error, Result};

const SIZE: (u32, u32) = (640, 420);
const PALETTE: [RGBColor; 4] = [
    RGBColor(31, 119, 180),
    RGBColor(214, 39, 40),
    RGBColor(44, 160, 44),
    RGBColor(148, 103, 189),
];

fn plot_error(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Data(format!("{}: plotting failed: {e}", path.display()))
}

fn label(r: &EvalReport) -> String {
    r.regime.map(|g| g.to_string()).unwrap_or_else(|| r.dataset.clone())
}

/// Error against `n_im` (log axis), one line per report.
pub fn plot_regression(reports: &[&EvalReport], path: &Path) -> Result<()> {
    let protocol = reports.first().map(|r| r.protocol).ok_or_else(|| plot_error(path, "no reports"))?;
    let points: Vec<Vec<(f64, f64)>> = reports
        .iter()
        .map(|r| {
            r.rows
                .iter()
                .filter_map(|row| row.n_im.map(|n| (n as f64, row.value)))
                .collect()
        })
        .collect();
    let xmax = points.iter().flatten().map(|p| p.0).fold(1.0, f64::max) * 1.5;
    let ymax = points.iter().flatten().map(|p| p.1).fold(0.0, f64::max).max(1e-9) * 1.1;
    let root = SVGBackend::new(path, SIZE).into_drawing_area();
    root.fill(&WHITE).map_err(|e| plot_error(path, e))?;
    let mut chart = ChartBuilder::on(&root)
        .caption(format!("{protocol} regression error"), ("sans-serif", 20))
        .margin(12)
        .x_label_area_size(40)
        .y_label_area_size(56)
        .build_cartesian_2d((0.8f64..xmax).log_scale(), 0f64..ymax)
        .map_err(|e| plot_error(path, e))?;
    chart
        .configure_mesh()
        .x_desc("n_im (annotated images used to fit the regressor)")
        .y_desc(reports[0].normalization.as_str())
        .draw()
        .map_err(|e| plot_error(path, e))?;
    for (i, (r, pts)) in reports.iter().zip(&points).enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        chart
            .draw_series(LineSeries::new(pts.iter().copied(), color.stroke_width(2)))
            .map_err(|e| plot_error(path, e))?
            .label(label(r))
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 16, y)], color.stroke_width(2)));
        chart
            .draw_series(pts.iter().map(|&p| Circle::new(p, 3, color.filled())))
            .map_err(|e| plot_error(path, e))?;
    }
    chart
        .configure_series_labels()
        .border_style(BLACK)
        .background_style(WHITE)
        .draw()
        .map_err(|e| plot_error(path, e))?;
    root.present().map_err(|e| plot_error(path, e))
}

/// Per-landmark consistency error, sorted ascending, grouped bars per report.
pub fn plot_consistency(reports: &[&EvalReport], path: &Path) -> Result<()> {
    let k = reports.iter().map(|r| r.rows.len()).max().unwrap_or(0);
    if k == 0 {
        return Err(plot_error(path, "no per-point values"));
    }
    let ymax = reports
        .iter()
        .flat_map(|r| r.rows.iter().map(|row| row.value))
        .fold(0.0, f64::max)
        .max(1e-9)
        * 1.1;
    let root = SVGBackend::new(path, SIZE).into_drawing_area();
    root.fill(&WHITE).map_err(|e| plot_error(path, e))?;
    let mut chart = ChartBuilder::on(&root)
        .caption("consistency error per point", ("sans-serif", 20))
        .margin(12)
        .x_label_area_size(40)
        .y_label_area_size(56)
        .build_cartesian_2d(0f64..k as f64 + 1.0, 0f64..ymax)
        .map_err(|e| plot_error(path, e))?;
    chart
        .configure_mesh()
        .disable_x_mesh()
        .x_desc("point (sorted by error)")
        .y_desc(reports[0].normalization.as_str())
        .draw()
        .map_err(|e| plot_error(path, e))?;
    let width = 0.8 / reports.len() as f64;
    for (i, r) in reports.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let bars = r.rows.iter().enumerate().map(move |(j, row)| {
            let x0 = j as f64 + 0.6 + i as f64 * width;
            Rectangle::new([(x0, 0.0), (x0 + width, row.value)], color.filled())
        });
        chart
            .draw_series(bars)
            .map_err(|e| plot_error(path, e))?
            .label(match r.mean {
                Some(m) => format!("{} (mean {m:.2})", label(r)),
                None => label(r),
            })
            .legend(move |(x, y)| Rectangle::new([(x, y - 5), (x + 12, y + 5)], color.filled()));
    }
    chart
        .configure_series_labels()
        .border_style(BLACK)
        .background_style(WHITE)
        .draw()
        .map_err(|e| plot_error(path, e))?;
    root.present().map_err(|e| plot_error(path, e))
}

/// One SVG per protocol present in `reports` (`forward.svg`, `backward.svg`,
/// `consistency.svg`), each overlaying every report of that protocol.
pub fn plot_reports(reports: &[EvalReport], out_dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut written = Vec::new();
    for protocol in Protocol::ALL {
        let group: Vec<&EvalReport> = reports.iter().filter(|r| r.protocol == protocol).collect();
        if group.is_empty() {
            continue;
        }
        let path = out_dir.join(format!("{protocol}.svg"));
        match protocol {
            Protocol::Consistency => plot_consistency(&group, &path)?,
            _ => plot_regression(&group, &path)?,
        }
        written.push(path);
    }
    Ok(written)
}
