//! Log-log trend extraction from sweep rows.

use attn_interp::{Error, Result};

use crate::sweep::ResultRow;

/// Median of a slice (average of the middle pair for even lengths).
fn median(values: &mut Vec<f64>) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let k = values.len();
    if k % 2 == 1 {
        values[k / 2]
    } else {
        0.5 * (values[k / 2 - 1] + values[k / 2])
    }
}

/// Groups rows by axis value and returns (value, median err_inf) sorted by
/// value.
pub fn median_per_value(rows: &[ResultRow]) -> Vec<(f64, f64)> {
    let mut values: Vec<f64> = rows.iter().map(|r| r.value).collect();
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    values.dedup();
    values
        .into_iter()
        .map(|v| {
            let mut errs: Vec<f64> = rows
                .iter()
                .filter(|r| r.value == v)
                .map(|r| r.err_inf)
                .collect();
            (v, median(&mut errs))
        })
        .collect()
}

/// Least-squares slope of log(median err_inf) against log(axis value).
pub fn fit_loglog_slope(rows: &[ResultRow]) -> Result<f64> {
    let points: Vec<(f64, f64)> = median_per_value(rows)
        .into_iter()
        .filter(|&(v, e)| v > 0.0 && e > 0.0)
        .collect();
    if points.len() < 3 {
        return Err(Error::InvalidArgument(format!(
            "need at least 3 distinct axis values with positive errors, got {}",
            points.len()
        )));
    }
    let logs: Vec<(f64, f64)> = points.iter().map(|&(v, e)| (v.ln(), e.ln())).collect();
    let k = logs.len() as f64;
    let sx: f64 = logs.iter().map(|p| p.0).sum();
    let sy: f64 = logs.iter().map(|p| p.1).sum();
    let sxx: f64 = logs.iter().map(|p| p.0 * p.0).sum();
    let sxy: f64 = logs.iter().map(|p| p.0 * p.1).sum();
    let denom = k * sxx - sx * sx;
    if denom.abs() < 1e-12 {
        return Err(Error::InvalidArgument("degenerate axis values".into()));
    }
    Ok((k * sxy - sx * sy) / denom)
}
