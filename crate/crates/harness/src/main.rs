use std::path::PathBuf;
use std::process::ExitCode;

use attn_interp_harness::config::{Axis, Experiment, SweepConfig};
use attn_interp_harness::slope::fit_loglog_slope;
use attn_interp_harness::sweep::{run_sweep, ResultRow};
use clap::{Args, Parser, Subcommand};

/// Builds softmax-attention weight matrices from closed-form recipes and
/// verifies every construction against brute-force oracles.
#[derive(Parser)]
#[command(name = "attn-interp", version, about)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Default)]
struct CommonArgs {
    /// Sequence length (token count).
    #[arg(long)]
    n: Option<usize>,
    /// Token dimension.
    #[arg(long)]
    d: Option<usize>,
    /// Interpolation precision (anchor count).
    #[arg(long)]
    p: Option<usize>,
    /// Head count.
    #[arg(long)]
    heads: Option<usize>,
    /// Truncation interval lower end (grid experiments: box half-width is
    /// |b|).
    #[arg(long, allow_hyphen_values = true)]
    a: Option<f64>,
    /// Truncation interval upper end.
    #[arg(long, allow_hyphen_values = true)]
    b: Option<f64>,
    /// Precision knob (per-experiment meaning; see docs).
    #[arg(long)]
    epsilon: Option<f64>,
    /// Override the construction's own temperature budget.
    #[arg(long)]
    beta: Option<f64>,
    /// Grid granularity per axis.
    #[arg(long)]
    g: Option<usize>,
    /// Bump sharpness in (0,1).
    #[arg(long)]
    delta: Option<f64>,
    /// Monte-Carlo / verification sample count.
    #[arg(long)]
    samples: Option<usize>,
    /// Trials per axis value.
    #[arg(long)]
    trials: Option<usize>,
    /// Master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// key=value config file; flags given here override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out_csv: Option<PathBuf>,
    #[arg(long)]
    out_svg: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// hardmax | single | multi | grid_scalar | seq2seq | colwise |
    /// three_layer | icl | icgd
    #[arg(long)]
    experiment: Option<String>,
    /// p | H | b_minus_a | g | T
    #[arg(long)]
    axis: Option<String>,
    /// Comma-separated, strictly increasing axis values.
    #[arg(long)]
    values: Option<String>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Softmax-vs-hardmax deviation at the computed temperature budget.
    HardmaxCheck(CommonArgs),
    /// Single-head truncated-linear approximator vs the clipped oracle.
    SingleHead(CommonArgs),
    /// Multi-head approximator with per-head anchor groups.
    MultiHead(CommonArgs),
    /// Grid universal approximation, sequence to scalar (token count is
    /// capped at 3: the center count grows as g^(d n)).
    GridScalar(CommonArgs),
    /// Grid universal approximation, sequence to sequence (token count
    /// capped at 3, see grid-scalar).
    Seq2seq(CommonArgs),
    /// Column-wise linear map exactness.
    Colwise(CommonArgs),
    /// Three-layer ReLU-net simulation.
    ThreeLayer(CommonArgs),
    /// In-context truncated linear models.
    Icl(CommonArgs),
    /// One-step in-context gradient descent.
    Icgd(CommonArgs),
    /// Configured multi-value sweep with CSV/SVG output.
    Sweep(SweepArgs),
}

fn apply_common(cfg: &mut SweepConfig, args: &CommonArgs) -> attn_interp::Result<()> {
    if let Some(path) = &args.config {
        let text = std::fs::read_to_string(path)?;
        cfg.apply_file(&text)?;
    }
    if let Some(v) = args.n {
        cfg.base.n = v;
    }
    if let Some(v) = args.d {
        cfg.base.d = v;
    }
    if let Some(v) = args.p {
        cfg.base.p = v;
    }
    if let Some(v) = args.heads {
        cfg.base.heads = v;
    }
    if let Some(v) = args.a {
        cfg.base.a = v;
    }
    if let Some(v) = args.b {
        cfg.base.b = v;
    }
    if let Some(v) = args.epsilon {
        cfg.base.epsilon = Some(v);
    }
    if let Some(v) = args.beta {
        cfg.base.beta = Some(v);
    }
    if let Some(v) = args.g {
        cfg.base.g = v;
    }
    if let Some(v) = args.delta {
        cfg.base.delta = v;
    }
    if let Some(v) = args.samples {
        cfg.base.samples = v;
    }
    if let Some(v) = args.trials {
        cfg.trials = v;
    }
    if let Some(v) = args.seed {
        cfg.seed = v;
    }
    if let Some(v) = &args.out_csv {
        cfg.out_csv = Some(v.clone());
    }
    if let Some(v) = &args.out_svg {
        cfg.out_svg = Some(v.clone());
    }
    Ok(())
}

/// Default single-value "sweep" for an experiment subcommand: the axis is
/// the experiment's natural one and the single value comes from the base
/// parameters.
fn single_value_config(experiment: Experiment) -> SweepConfig {
    let axis = match experiment {
        Experiment::Multi => Axis::H,
        Experiment::GridScalar | Experiment::Seq2Seq => Axis::G,
        Experiment::Icgd => Axis::T,
        _ => Axis::P,
    };
    SweepConfig::new(experiment, axis, vec![1.0])
}

fn finalize_values(cfg: &mut SweepConfig) {
    // the single-experiment commands sweep one point: the base value of
    // their natural axis
    cfg.values = vec![match cfg.axis {
        Axis::P => cfg.base.p as f64,
        Axis::H => cfg.base.heads as f64,
        Axis::G => cfg.base.g as f64,
        Axis::BMinusA => cfg.base.b - cfg.base.a,
        Axis::T => 1.0,
    }];
}

fn print_rows(rows: &[ResultRow]) {
    println!("{}", attn_interp_harness::rows_to_csv(rows).trim_end());
}

fn run(cli: Cli) -> attn_interp::Result<bool> {
    let (mut cfg, common) = match cli.cmd {
        Cmd::HardmaxCheck(c) => (single_value_config(Experiment::Hardmax), c),
        Cmd::SingleHead(c) => (single_value_config(Experiment::Single), c),
        Cmd::MultiHead(c) => (single_value_config(Experiment::Multi), c),
        Cmd::GridScalar(c) => (single_value_config(Experiment::GridScalar), c),
        Cmd::Seq2seq(c) => (single_value_config(Experiment::Seq2Seq), c),
        Cmd::Colwise(c) => (single_value_config(Experiment::Colwise), c),
        Cmd::ThreeLayer(c) => (single_value_config(Experiment::ThreeLayer), c),
        Cmd::Icl(c) => (single_value_config(Experiment::Icl), c),
        Cmd::Icgd(c) => (single_value_config(Experiment::Icgd), c),
        Cmd::Sweep(args) => {
            let mut cfg = SweepConfig::new(Experiment::Single, Axis::P, vec![]);
            apply_common(&mut cfg, &args.common)?;
            if let Some(e) = &args.experiment {
                cfg.experiment = Experiment::parse(e)?;
            }
            if let Some(a) = &args.axis {
                cfg.axis = Axis::parse(a)?;
            }
            if let Some(v) = &args.values {
                cfg.apply_kv("values", v)?;
            }
            let rows = run_sweep(&cfg)?;
            print_rows(&rows);
            if let Ok(slope) = fit_loglog_slope(&rows) {
                println!("# loglog slope of median err_inf vs {}: {}", cfg.axis.name(), slope);
            }
            return Ok(rows.iter().all(|r| r.pass));
        }
    };
    apply_common(&mut cfg, &common)?;
    finalize_values(&mut cfg);
    let rows = run_sweep(&cfg)?;
    print_rows(&rows);
    Ok(rows.iter().all(|r| r.pass))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("FAIL: at least one trial exceeded its bound");
            ExitCode::FAILURE
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
