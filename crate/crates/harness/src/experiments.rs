//! One trial of each experiment: generate a random instance from the trial
//! seed, build the construction, grade it against its oracle, and emit a
//! result row. Everything is a pure function of (config, trial seed).

use attn_interp::construct_multi::{verify_multi_head, MultiHeadPlan};
use attn_interp::construct_single::{verify_single_head, SingleHeadPlan};
use attn_interp::grid_uap::{
    build_seq2seq, build_seq_to_scalar, lp_error_whole_box, verify_scalar_in_core, InputGrid,
    ScalarTargetTable, TargetFn, UapBudgets,
};
use attn_interp::hardmax::{beta_for_unique_max, deviation_from_onehot};
use attn_interp::icl::{
    build_icgd_layer, stacked_icgd_trajectory, verify_icl_truncated, GradNetSpec, ICLPrompt,
    IcgdBudget,
};
use attn_interp::native_seq2seq::{
    augment_colwise_input, build_colwise, build_three_layer_seq2seq, ColwiseSpec, FfnUnit,
    ThreeLayerBudget, ThreeLayerFfn,
};
use attn_interp::numkit::{seeding, Matrix};
use attn_interp::{IndexMapG, InterpolationGrid, Result, TruncatedLinearModel};
use rand::Rng;

use crate::config::{Axis, Experiment, SweepConfig};
use crate::sweep::ResultRow;

/// Random per-token truncated linear models in the section-5 style:
/// standard-normal weights and biases, tokens drawn uniformly wide.
fn random_task(
    rng: &mut rand_chacha::ChaCha8Rng,
    d: usize,
    n: usize,
    a: f64,
    b: f64,
) -> Vec<TruncatedLinearModel> {
    (0..n)
        .map(|_| {
            let w: Vec<f64> = (0..d).map(|_| seeding::standard_normal(rng)).collect();
            TruncatedLinearModel::new(w, seeding::standard_normal(rng), a, b).unwrap()
        })
        .collect()
}

fn range_for(cfg: &SweepConfig, value: f64) -> (f64, f64) {
    if cfg.axis == Axis::BMinusA {
        (-value / 2.0, value / 2.0)
    } else {
        (cfg.base.a, cfg.base.b)
    }
}

fn row_skeleton(cfg: &SweepConfig, value: f64, seed: u64) -> ResultRow {
    ResultRow {
        experiment: cfg.experiment.name().to_string(),
        axis: cfg.axis.name().to_string(),
        value,
        n: cfg.base.n,
        d: cfg.base.d,
        p: cfg.base.p,
        h: cfg.base.heads,
        beta: 0.0,
        seed,
        err_inf: 0.0,
        err_bound: 0.0,
        err_lp: None,
        pass: false,
    }
}

pub fn run_trial(cfg: &SweepConfig, value: f64, seed: u64) -> Result<ResultRow> {
    match cfg.experiment {
        Experiment::Hardmax => hardmax_trial(cfg, value, seed),
        Experiment::Single => single_trial(cfg, value, seed),
        Experiment::Multi => multi_trial(cfg, value, seed),
        Experiment::GridScalar => grid_scalar_trial(cfg, value, seed),
        Experiment::Seq2Seq => seq2seq_trial(cfg, value, seed),
        Experiment::Colwise => colwise_trial(cfg, value, seed),
        Experiment::ThreeLayer => three_layer_trial(cfg, value, seed),
        Experiment::Icl => icl_trial(cfg, value, seed),
        Experiment::Icgd => icgd_trial(cfg, value, seed),
    }
}

fn hardmax_trial(cfg: &SweepConfig, value: f64, seed: u64) -> Result<ResultRow> {
    let eps = cfg.epsilon();
    let n = cfg.base.n.max(2);
    let mut rng = seeding::rng_for(seed, 0);
    let mut worst = 0.0f64;
    for _ in 0..cfg.base.samples.max(1) {
        let mut scores: Vec<f64> = (0..n).map(|_| rng.gen_range(-3.0..3.0)).collect();
        scores.sort_by(|a, b| b.partial_cmp(a).unwrap());
        if scores[0] - scores[1] < 1e-9 {
            scores[0] += 1e-6;
        }
        let beta = beta_for_unique_max(n, scores[0] - scores[1], eps)?;
        worst = worst.max(deviation_from_onehot(&scores, beta));
    }
    let mut row = row_skeleton(cfg, value, seed);
    row.err_inf = worst;
    row.err_bound = eps;
    row.pass = worst <= eps;
    Ok(row)
}

fn single_trial(cfg: &SweepConfig, value: f64, seed: u64) -> Result<ResultRow> {
    let p = if cfg.axis == Axis::P {
        value as usize
    } else {
        cfg.base.p
    };
    let (a, b) = range_for(cfg, value);
    let (d, n) = (cfg.base.d, cfg.base.n);
    let mut rng = seeding::rng_for(seed, 1);
    let task = random_task(&mut rng, d, n, a, b);
    let grid = InterpolationGrid::new(a, b, p)?;
    let mut plan = SingleHeadPlan::new(task, grid, IndexMapG::constant(0, 1)?, cfg.epsilon())?;
    if let Some(beta) = cfg.base.beta {
        plan = plan.with_beta(beta);
    }
    let x = Matrix::from_fn(d, n, |_, _| rng.gen_range(-2.0..2.0));
    let report = verify_single_head(&plan, &x)?;
    let mut row = row_skeleton(cfg, value, seed);
    row.p = p;
    row.h = 1;
    row.beta = plan.beta;
    row.err_inf = report.measured_inf;
    row.err_bound = report.bound;
    row.pass = report.pass;
    Ok(row)
}

fn multi_trial(cfg: &SweepConfig, value: f64, seed: u64) -> Result<ResultRow> {
    let heads = if cfg.axis == Axis::H {
        value as usize
    } else {
        cfg.base.heads
    };
    let (a, b) = range_for(cfg, value);
    let (d, n) = (cfg.base.d, cfg.base.n.max(3));
    let mut rng = seeding::rng_for(seed, 2);
    let task = random_task(&mut rng, d, n, a, b);
    let mut plan = MultiHeadPlan::new(task, heads, 0, 1, cfg.epsilon())?;
    if let Some(beta) = cfg.base.beta {
        plan = plan.with_beta(beta);
    }
    let x = Matrix::from_fn(d, n, |_, _| rng.gen_range(-2.0..2.0));
    let report = verify_multi_head(&plan, &x)?;
    let mut row = row_skeleton(cfg, value, seed);
    row.n = n;
    row.p = plan.grid.p;
    row.h = heads;
    row.beta = plan.beta;
    row.err_inf = report.measured_inf;
    row.err_bound = report.bound;
    row.pass = report.pass;
    Ok(row)
}

fn grid_budgets(cfg: &SweepConfig) -> UapBudgets {
    let eps0 = cfg.epsilon();
    UapBudgets {
        epsilon0: eps0,
        epsilon1: eps0 / 4.0,
    }
}

fn grid_scalar_trial(cfg: &SweepConfig, value: f64, seed: u64) -> Result<ResultRow> {
    let g = if cfg.axis == Axis::G {
        value as usize
    } else {
        cfg.base.g
    };
    let (d, n) = (cfg.base.d, cfg.base.n.min(3).max(1));
    let grid = InputGrid::new(cfg.base.b.abs().max(0.5), g, d, n, cfg.base.delta)?;
    let budgets = grid_budgets(cfg);
    let target = TargetFn::SineOfSum;
    let f = |x: &Matrix| target.eval(x);
    let table = ScalarTargetTable::tabulate(&grid, f);
    let built = build_seq_to_scalar(&grid, &table, budgets)?;
    let report = verify_scalar_in_core(
        |x| built.forward_scalar(x),
        &grid,
        f,
        &budgets,
        built.f_sup,
        cfg.base.samples.min(300),
        seeding::derive(seed, &[3]),
    )?;
    let lp = lp_error_whole_box(
        |x| built.forward(x),
        &grid,
        |x| Matrix::from_vec(1, 1, vec![f(x)]).unwrap(),
        2.0,
        cfg.base.samples,
        seeding::derive(seed, &[4]),
    );
    let mut row = row_skeleton(cfg, value, seed);
    row.n = n;
    row.p = grid.center_count();
    row.h = built.stage1.heads.len();
    row.beta = built.stage2.heads[0].beta;
    row.err_inf = report.in_core_max;
    row.err_bound = report.in_core_bound;
    row.err_lp = Some(lp);
    row.pass = report.pass;
    Ok(row)
}

fn seq2seq_trial(cfg: &SweepConfig, value: f64, seed: u64) -> Result<ResultRow> {
    let g = if cfg.axis == Axis::G {
        value as usize
    } else {
        cfg.base.g
    };
    let (d, n) = (cfg.base.d, cfg.base.n.min(3).max(2));
    let grid = InputGrid::new(cfg.base.b.abs().max(0.5), g, d, n, cfg.base.delta)?;
    let budgets = grid_budgets(cfg);
    // column rotation: entry (i, j) of the target reads X_{i, (j+1) mod n}
    let f = move |x: &Matrix| Matrix::from_fn(x.rows(), x.cols(), |i, j| x.get(i, (j + 1) % n));
    let tables: Vec<ScalarTargetTable> = (0..d * n)
        .map(|e| ScalarTargetTable::tabulate(&grid, |v| f(v).get(e / n, e % n)))
        .collect();
    let built = build_seq2seq(&grid, &tables, budgets)?;
    let bound = budgets.in_core_bound(d, built.f_sup);
    // in-core per-entry check
    let mut rng = seeding::rng_for(seed, 5);
    let mut worst = 0.0f64;
    for _ in 0..cfg.base.samples.min(200) {
        let (idx, x) = grid.sample_in_core(&mut rng);
        let out = built.forward(&x)?;
        let want = f(&grid.center(idx));
        worst = worst.max(out.sub(&want)?.max_abs());
    }
    let lp = lp_error_whole_box(
        |x| built.forward(x),
        &grid,
        f,
        2.0,
        cfg.base.samples,
        seeding::derive(seed, &[6]),
    );
    let mut row = row_skeleton(cfg, value, seed);
    row.n = n;
    row.p = grid.center_count();
    row.h = built.stage1.heads.len() + built.stage2.heads.len();
    row.beta = built.stage2.heads[0].beta;
    row.err_inf = worst;
    row.err_bound = bound;
    row.err_lp = Some(lp);
    row.pass = worst <= bound;
    Ok(row)
}

fn colwise_trial(cfg: &SweepConfig, value: f64, seed: u64) -> Result<ResultRow> {
    let (d, n) = (cfg.base.d.max(1), cfg.base.n.max(2));
    let eps_pad = cfg.epsilon();
    let mut rng = seeding::rng_for(seed, 7);
    let a_lin = Matrix::from_fn(d, d, |_, _| seeding::standard_normal(&mut rng));
    let b_mix = Matrix::from_fn(n, n, |_, _| rng.gen_range(0.05..1.0));
    let x = Matrix::from_fn(d, n, |_, _| rng.gen_range(-1.0..1.0));
    let ax_bound = 10.0 * d as f64;
    let spec = ColwiseSpec::new(a_lin.clone(), b_mix.clone(), eps_pad, ax_bound)?;
    let head = build_colwise(&spec)?;
    let out = attn_interp::attn::forward_head(&head, &augment_colwise_input(&x))?;
    let want = a_lin.matmul(&x)?.matmul(&b_mix)?;
    let mut exact_err = 0.0f64;
    for i in 0..d {
        for j in 0..n {
            exact_err = exact_err.max((out.get(i, j) - want.get(i, j)).abs());
        }
    }
    let pad: f64 = (0..d).map(|i| out.get(i, n).abs()).fold(0.0, f64::max);
    let mut row = row_skeleton(cfg, value, seed);
    row.h = 1;
    row.beta = spec.t_route;
    row.err_inf = exact_err;
    row.err_bound = 1e-8;
    row.err_lp = Some(pad);
    row.pass = exact_err <= 1e-8 && pad <= eps_pad;
    Ok(row)
}

fn three_layer_trial(cfg: &SweepConfig, value: f64, seed: u64) -> Result<ResultRow> {
    let n = cfg.base.n.clamp(2, 4);
    let target_eps = cfg.epsilon();
    let mut rng = seeding::rng_for(seed, 8);
    let units: Vec<Vec<FfnUnit>> = (0..n)
        .map(|_| {
            (0..2)
                .map(|_| FfnUnit {
                    sign: if rng.gen_bool(0.5) { 1.0 } else { -1.0 },
                    w: (0..n).map(|_| vec![rng.gen_range(-1.0..1.0)]).collect(),
                })
                .collect()
        })
        .collect();
    let ffn = ThreeLayerFfn { d: 1, n, units };
    let budget = ThreeLayerBudget {
        eps_pre: (target_eps / 5.0).min(0.02),
        ..ThreeLayerBudget::default()
    };
    let net = build_three_layer_seq2seq(&ffn, &budget)?;
    let mut worst = 0.0f64;
    for _ in 0..cfg.base.samples.min(60) {
        let x = Matrix::from_fn(1, n, |_, _| rng.gen_range(-1.0..1.0));
        let out = net.forward(&x)?;
        worst = worst.max(out.sub(&ffn.eval(&x))?.max_abs());
    }
    let mut row = row_skeleton(cfg, value, seed);
    row.n = n;
    row.d = 1;
    row.h = net.layer1.heads.len() + net.layer2.heads.len() + net.layer3.heads.len();
    row.beta = net.layer3.heads[0].beta;
    row.err_inf = worst;
    row.err_bound = target_eps;
    row.pass = worst <= target_eps;
    Ok(row)
}

fn icl_trial(cfg: &SweepConfig, value: f64, seed: u64) -> Result<ResultRow> {
    let p = if cfg.axis == Axis::P {
        value as usize
    } else {
        cfg.base.p
    };
    let (a, b) = range_for(cfg, value);
    let (d, n) = (cfg.base.d, cfg.base.n);
    let grid = InterpolationGrid::new(a, b, p)?;
    let g_map = IndexMapG::constant(0, 1)?;
    let mut rng = seeding::rng_for(seed, 9);
    let xs = Matrix::from_fn(d, n, |_, _| rng.gen_range(-1.0..1.0));
    let w: Vec<f64> = (0..d)
        .map(|_| rng.gen_range(-1.0..1.0) / d as f64)
        .collect();
    let ts: Vec<f64> = (0..n).map(|_| rng.gen_range(-0.5..0.5)).collect();
    let prompt = ICLPrompt::Truncated { xs, w, ts };
    let report = verify_icl_truncated(&grid, &g_map, cfg.epsilon(), &prompt)?;
    let mut row = row_skeleton(cfg, value, seed);
    row.p = p;
    row.h = 1;
    row.beta = attn_interp::construct_single::single_head_budget_beta(
        p,
        grid.delta_l,
        cfg.epsilon(),
        true,
    )?;
    row.err_inf = report.measured_inf;
    row.err_bound = report.bound;
    row.pass = report.pass;
    Ok(row)
}

fn icgd_trial(cfg: &SweepConfig, value: f64, seed: u64) -> Result<ResultRow> {
    let (d, n) = (cfg.base.d.min(4).max(1), cfg.base.n.max(2));
    let h = cfg.base.heads.clamp(1, 8);
    let budget = IcgdBudget {
        eps1: cfg.epsilon(),
        eps0: cfg.epsilon() / 4.0,
        b1: 2.0,
    };
    let mut rng = seeding::rng_for(seed, 10);
    let coef: Vec<Vec<(f64, f64, f64)>> = (0..d)
        .map(|_| {
            (0..h)
                .map(|_| {
                    (
                        rng.gen_range(-1.0..1.0),
                        rng.gen_range(-1.0..1.0),
                        rng.gen_range(-1.0..1.0),
                    )
                })
                .collect()
        })
        .collect();
    let net = GradNetSpec::new(coef)?;
    let xs = Matrix::from_fn(d, n, |_, _| rng.gen_range(-0.4..0.4) / d as f64);
    let ys: Vec<f64> = (0..n).map(|_| rng.gen_range(-0.5..0.5)).collect();
    let w: Vec<f64> = (0..d).map(|_| rng.gen_range(-0.4..0.4) / d as f64).collect();
    let prompt = ICLPrompt::Grad { xs, ys, w };
    let eta = 0.1;

    let mut row = row_skeleton(cfg, value, seed);
    row.n = n;
    row.d = d;
    row.h = h;
    if cfg.axis == Axis::T {
        let steps = value as usize;
        let traj = stacked_icgd_trajectory(&net, &prompt, eta, steps.max(1), &budget)?;
        row.err_inf = traj.cumulative_divergence;
        // per-step budget compounded with a factor-2 growth allowance
        row.err_bound = steps as f64 * traj.per_step_bound * 2.0;
        row.err_lp = Some(traj.growth_factor);
        row.pass = traj.cumulative_divergence <= row.err_bound;
    } else {
        let report = attn_interp::icl::verify_icgd_step(&net, &prompt, eta, &budget)?;
        row.err_inf = report.measured_inf;
        row.err_bound = report.bound;
        row.pass = report.pass;
    }
    let stack = build_icgd_layer(&net, eta, n, &budget)?;
    row.beta = stack.heads[0].beta;
    Ok(row)
}

/// Least-squares fit of a scalar sequence function by signed random ReLU
/// features; produces test targets for the three-layer assembly. ReLU's
/// positive homogeneity absorbs each coefficient's magnitude into the
/// feature weights, leaving a +-1 sign outside.
pub fn fit_random_feature_relu(
    f: &dyn Fn(&Matrix) -> f64,
    d: usize,
    n: usize,
    units: usize,
    samples: usize,
    x_bound: f64,
    seed: u64,
) -> Vec<FfnUnit> {
    let mut rng = seeding::rng_for(seed, 11);
    let dirs: Vec<Vec<Vec<f64>>> = (0..units)
        .map(|_| {
            (0..n)
                .map(|_| (0..d).map(|_| seeding::standard_normal(&mut rng)).collect())
                .collect()
        })
        .collect();
    let feature = |u: &Vec<Vec<f64>>, x: &Matrix| -> f64 {
        let mut acc = 0.0;
        for (j, wj) in u.iter().enumerate() {
            for (r, w) in wj.iter().enumerate() {
                acc += w * x.get(r, j);
            }
        }
        acc.max(0.0)
    };
    // normal equations with a small ridge
    let k = units;
    let mut ata = vec![vec![0.0; k]; k];
    let mut atb = vec![0.0; k];
    for _ in 0..samples {
        let x = Matrix::from_fn(d, n, |_, _| rng.gen_range(-x_bound..x_bound));
        let phi: Vec<f64> = dirs.iter().map(|u| feature(u, &x)).collect();
        let y = f(&x);
        for i in 0..k {
            for j in 0..k {
                ata[i][j] += phi[i] * phi[j];
            }
            atb[i] += phi[i] * y;
        }
    }
    for (i, row) in ata.iter_mut().enumerate() {
        row[i] += 1e-6 * samples as f64;
    }
    let coef = solve_dense(&mut ata, &mut atb);
    dirs.into_iter()
        .zip(coef)
        .map(|(w, c)| FfnUnit {
            sign: if c >= 0.0 { 1.0 } else { -1.0 },
            w: w
                .into_iter()
                .map(|wj| wj.into_iter().map(|v| v * c.abs()).collect())
                .collect(),
        })
        .collect()
}

/// Gaussian elimination with partial pivoting; solves in place.
fn solve_dense(a: &mut [Vec<f64>], b: &mut [f64]) -> Vec<f64> {
    let k = b.len();
    for col in 0..k {
        let pivot = (col..k)
            .max_by(|&i, &j| a[i][col].abs().partial_cmp(&a[j][col].abs()).unwrap())
            .unwrap();
        a.swap(col, pivot);
        b.swap(col, pivot);
        let diag = a[col][col];
        if diag.abs() < 1e-12 {
            continue;
        }
        for row in col + 1..k {
            let factor = a[row][col] / diag;
            for c in col..k {
                a[row][c] -= factor * a[col][c];
            }
            b[row] -= factor * b[col];
        }
    }
    let mut x = vec![0.0; k];
    for row in (0..k).rev() {
        let mut acc = b[row];
        for c in row + 1..k {
            acc -= a[row][c] * x[c];
        }
        x[row] = if a[row][row].abs() < 1e-12 {
            0.0
        } else {
            acc / a[row][row]
        };
    }
    x
}

/// Recomputes the bound a row should carry from its own parameters; used to
/// cross-check emitted CSVs against the owning formulas.
pub fn expected_bound(row: &ResultRow, cfg: &SweepConfig) -> Option<f64> {
    let eps = cfg.epsilon();
    let (a, b) = if cfg.axis == Axis::BMinusA {
        (-row.value / 2.0, row.value / 2.0)
    } else {
        (cfg.base.a, cfg.base.b)
    };
    let m = a.abs().max(b.abs());
    match cfg.experiment {
        Experiment::Hardmax => Some(eps),
        Experiment::Single | Experiment::Icl => Some(m * eps + (b - a) / row.p as f64),
        Experiment::Multi => Some(m * eps + (b - a) / ((row.n - 2) as f64 * row.h as f64)),
        Experiment::Icgd if cfg.axis != Axis::T => {
            Some(row.d as f64 * row.h as f64 * eps + row.d as f64 * (eps / 4.0))
        }
        Experiment::Colwise => Some(1e-8),
        _ => None,
    }
}
