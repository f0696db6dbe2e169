//! Plain-text SVG emission: a log-log line plot of median error against the
//! axis value with min/max whiskers per value. No external renderer; the
//! output is deterministic byte-for-byte for fixed rows.

use std::path::Path;

use attn_interp::{Error, Result};

use crate::slope::median_per_value;
use crate::sweep::ResultRow;

const W: f64 = 640.0;
const H: f64 = 480.0;
const MARGIN: f64 = 64.0;

fn fmt(v: f64) -> String {
    format!("{:.2}", v)
}

/// Log-scale span padded by 10% on each side.
fn log_span(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for v in values {
        if v > 0.0 {
            lo = lo.min(v.ln());
            hi = hi.max(v.ln());
        }
    }
    if !lo.is_finite() || !hi.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-9 {
        (lo - 1.0, hi + 1.0)
    } else {
        let pad = 0.1 * (hi - lo);
        (lo - pad, hi + pad)
    }
}

/// Renders and writes the plot; the axis label comes from the rows.
pub fn emit_plot(rows: &[ResultRow], path: &Path) -> Result<()> {
    if rows.is_empty() {
        return Err(Error::InvalidArgument("no rows to plot".into()));
    }
    let axis = rows[0].axis.clone();
    std::fs::write(path, render_svg(rows, &axis))?;
    Ok(())
}

pub fn render_svg(rows: &[ResultRow], axis_label: &str) -> String {
    let med = median_per_value(rows);
    let (x_lo, x_hi) = log_span(med.iter().map(|&(v, _)| v));
    let (y_lo, y_hi) = log_span(rows.iter().map(|r| r.err_inf));
    let to_x = |v: f64| MARGIN + (v.ln() - x_lo) / (x_hi - x_lo) * (W - 2.0 * MARGIN);
    let to_y = |e: f64| H - MARGIN - (e.ln() - y_lo) / (y_hi - y_lo) * (H - 2.0 * MARGIN);

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\">\n"
    ));
    svg.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    // axes
    svg.push_str(&format!(
        "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>\n",
        fmt(MARGIN),
        fmt(H - MARGIN),
        fmt(W - MARGIN),
        fmt(H - MARGIN)
    ));
    svg.push_str(&format!(
        "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>\n",
        fmt(MARGIN),
        fmt(MARGIN),
        fmt(MARGIN),
        fmt(H - MARGIN)
    ));
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" font-size=\"14\" text-anchor=\"middle\">{} (log scale)</text>\n",
        fmt(W / 2.0),
        fmt(H - 16.0),
        axis_label
    ));
    svg.push_str(&format!(
        "<text x=\"18\" y=\"{}\" font-size=\"14\" text-anchor=\"middle\" transform=\"rotate(-90 18 {})\">error (log scale)</text>\n",
        fmt(H / 2.0),
        fmt(H / 2.0)
    ));

    // whiskers: min/max over trials at each value
    for &(v, _) in &med {
        let mut lo = f64::INFINITY;
        let mut hi: f64 = 0.0;
        for r in rows.iter().filter(|r| r.value == v && r.err_inf > 0.0) {
            lo = lo.min(r.err_inf);
            hi = hi.max(r.err_inf);
        }
        if lo.is_finite() && hi > 0.0 && hi > lo {
            svg.push_str(&format!(
                "<line x1=\"{x}\" y1=\"{}\" x2=\"{x}\" y2=\"{}\" stroke=\"#888\"/>\n",
                fmt(to_y(lo)),
                fmt(to_y(hi)),
                x = fmt(to_x(v)),
            ));
        }
    }

    // median polyline (only with at least two points)
    let points: Vec<(f64, f64)> = med
        .iter()
        .filter(|&&(_, e)| e > 0.0)
        .map(|&(v, e)| (to_x(v), to_y(e)))
        .collect();
    if points.len() >= 2 {
        let path: Vec<String> = points
            .iter()
            .map(|&(x, y)| format!("{},{}", fmt(x), fmt(y)))
            .collect();
        svg.push_str(&format!(
            "<polyline points=\"{}\" fill=\"none\" stroke=\"#1f77b4\" stroke-width=\"2\"/>\n",
            path.join(" ")
        ));
    }
    for &(x, y) in &points {
        svg.push_str(&format!(
            "<circle cx=\"{}\" cy=\"{}\" r=\"4\" fill=\"#1f77b4\"/>\n",
            fmt(x),
            fmt(y)
        ));
    }
    // tick labels at the data values
    for &(v, _) in &med {
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-size=\"11\" text-anchor=\"middle\">{}</text>\n",
            fmt(to_x(v)),
            fmt(H - MARGIN + 18.0),
            v
        ));
    }
    svg.push_str("</svg>\n");
    svg
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(value: f64, err: f64) -> ResultRow {
        ResultRow {
            experiment: "single".into(),
            axis: "p".into(),
            value,
            n: 8,
            d: 1,
            p: value as usize,
            h: 1,
            beta: 1.0,
            seed: 0,
            err_inf: err,
            err_bound: 1.0,
            err_lp: None,
            pass: true,
        }
    }

    #[test]
    fn four_point_sweep_has_four_markers() {
        let rows: Vec<ResultRow> = [16.0, 32.0, 64.0, 128.0]
            .iter()
            .map(|&v| row(v, 1.0 / v))
            .collect();
        let svg = render_svg(&rows, "p");
        assert_eq!(svg.matches("<circle").count(), 4);
        assert!(svg.contains("<polyline"));
    }

    #[test]
    fn single_row_has_marker_but_no_line() {
        let svg = render_svg(&[row(16.0, 0.1)], "p");
        assert_eq!(svg.matches("<circle").count(), 1);
        assert!(!svg.contains("<polyline"));
    }

    #[test]
    fn identical_rows_give_identical_bytes() {
        let rows: Vec<ResultRow> = [2.0, 4.0, 8.0].iter().map(|&v| row(v, 0.5 / v)).collect();
        assert_eq!(render_svg(&rows, "g"), render_svg(&rows, "g"));
    }
}
