//! Sweep execution and CSV emission. Deterministic: per-trial seeds derive
//! from (master seed, axis index, trial index) by the splitmix counter
//! scheme, trials run in parallel, and rows come back in (axis index,
//! trial index) order regardless of scheduling.

use std::fs;
use std::path::Path;

use attn_interp::numkit::seeding;
use attn_interp::Result;
use rayon::prelude::*;

use crate::config::SweepConfig;
use crate::experiments::run_trial;
use crate::svg::render_svg;

pub const CSV_HEADER: &str = "experiment,axis,value,n,d,p,H,beta,seed,err_inf,err_bound,err_lp,pass";

#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub experiment: String,
    pub axis: String,
    pub value: f64,
    pub n: usize,
    pub d: usize,
    pub p: usize,
    pub h: usize,
    pub beta: f64,
    pub seed: u64,
    pub err_inf: f64,
    pub err_bound: f64,
    pub err_lp: Option<f64>,
    pub pass: bool,
}

impl ResultRow {
    pub fn to_csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.experiment,
            self.axis,
            self.value,
            self.n,
            self.d,
            self.p,
            self.h,
            self.beta,
            self.seed,
            self.err_inf,
            self.err_bound,
            self.err_lp.map(|v| v.to_string()).unwrap_or_default(),
            self.pass
        )
    }
}

pub fn rows_to_csv(rows: &[ResultRow]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for row in rows {
        out.push_str(&row.to_csv_line());
        out.push('\n');
    }
    out
}

/// Derives the seed of (axis index vi, trial ti) under `master`.
pub fn trial_seed(master: u64, vi: usize, ti: usize) -> u64 {
    seeding::derive(master, &[vi as u64, ti as u64])
}

pub fn run_sweep(cfg: &SweepConfig) -> Result<Vec<ResultRow>> {
    cfg.validate()?;
    let jobs: Vec<(usize, usize)> = (0..cfg.values.len())
        .flat_map(|vi| (0..cfg.trials).map(move |ti| (vi, ti)))
        .collect();
    let rows: Vec<ResultRow> = jobs
        .par_iter()
        .map(|&(vi, ti)| run_trial(cfg, cfg.values[vi], trial_seed(cfg.seed, vi, ti)))
        .collect::<Result<_>>()?;
    if let Some(path) = &cfg.out_csv {
        write_atomically(path, &rows_to_csv(&rows))?;
    }
    if let Some(path) = &cfg.out_svg {
        write_atomically(path, &render_svg(&rows, cfg.axis.name()))?;
    }
    Ok(rows)
}

fn write_atomically(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    fs::write(path, contents)?;
    Ok(())
}
