//! Experiment harness: sweep configuration, per-trial runners, CSV and SVG
//! emission, and log-log slope extraction.
//!
//! File formats:
//!
//! - Config files are flat `key=value` lines ('#' comments); recognized keys
//!   are experiment, axis, values (comma-separated), trials, seed, n, d, p,
//!   heads, a, b, epsilon, beta, g, delta, samples, out_csv, out_svg.
//!   Command-line flags override file values.
//! - CSV rows carry the exact header
//!   `experiment,axis,value,n,d,p,H,beta,seed,err_inf,err_bound,err_lp,pass`;
//!   floats print in Rust's shortest round-trip form, so reruns with the
//!   same seed are byte-identical.
//! - Gradient-net coefficient files: one unit per line, `r h a b c`
//!   (1-based coordinate and unit indices, decimal coefficients).
//! - Attention stacks serialize to the self-describing text format
//!   implemented in the library (dimension headers plus row-major decimal
//!   values); see `AttentionStack::to_text`.

pub mod config;
pub mod experiments;
pub mod slope;
pub mod svg;
pub mod sweep;

pub use config::{Axis, BaseParams, Experiment, SweepConfig};
pub use slope::fit_loglog_slope;
pub use svg::{emit_plot, render_svg};
pub use sweep::{run_sweep, rows_to_csv, ResultRow, CSV_HEADER};
