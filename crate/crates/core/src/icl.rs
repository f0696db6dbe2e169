//! In-context constructions: truncated linear models read out of the prompt
//! (the attention weights never see w or t), and the one-step in-context
//! gradient-descent layer whose forward pass maps [x; y; w; 1] to
//! [x; y; w - eta grad L(w); 1].
//!
//! The gradient is defined through supplied per-coordinate ReLU nets
//! g_r(w^T x, y); each net unit becomes one attention head whose inner
//! truncation range is wide enough that Range reduces to ReLU on every
//! admissible prompt.

use crate::attn::{AffineMap, AttentionHead, AttentionStack};
use crate::construct_single::{single_head_budget_beta, ErrorReport};
use crate::error::{Error, Result};
use crate::hardmax::beta_for_two_max;
use crate::interp::{clip, IndexMapG, InterpolationGrid};
use crate::numkit::Matrix;

/// Guard on attention heads (d * H) per gradient layer.
pub const MAX_GRAD_HEADS: usize = 256;

/// Prompt contents for the two in-context layouts.
#[derive(Debug, Clone)]
pub enum ICLPrompt {
    /// Rows [x; w; t]: shared weight vector, per-token bias.
    Truncated {
        xs: Matrix,
        w: Vec<f64>,
        ts: Vec<f64>,
    },
    /// Rows [x; y; w; 1]: labelled examples plus the current iterate.
    Grad {
        xs: Matrix,
        ys: Vec<f64>,
        w: Vec<f64>,
    },
}

impl ICLPrompt {
    pub fn dims(&self) -> (usize, usize) {
        match self {
            ICLPrompt::Truncated { xs, .. } | ICLPrompt::Grad { xs, .. } => (xs.rows(), xs.cols()),
        }
    }

    /// Enforces the declared 1-norm bound: per-token ||x_i||_1, |y_i|, and
    /// ||w||_1 all at most b1. Violating prompts are rejected, not clipped.
    pub fn validate(&self, b1: f64) -> Result<()> {
        let (d, n) = self.dims();
        let check = |name: &str, v: f64| {
            if v > b1 {
                Err(Error::InvalidArgument(format!(
                    "{name} 1-norm {v} exceeds declared bound {b1}"
                )))
            } else {
                Ok(())
            }
        };
        match self {
            ICLPrompt::Truncated { xs, w, ts } => {
                if w.len() != d || ts.len() != n {
                    return Err(Error::DimensionMismatch("prompt shapes".into()));
                }
                for i in 0..n {
                    check("x", (0..d).map(|r| xs.get(r, i).abs()).sum())?;
                    check("t", ts[i].abs())?;
                }
                check("w", w.iter().map(|v| v.abs()).sum())
            }
            ICLPrompt::Grad { xs, ys, w } => {
                if w.len() != d || ys.len() != n {
                    return Err(Error::DimensionMismatch("prompt shapes".into()));
                }
                for i in 0..n {
                    check("x", (0..d).map(|r| xs.get(r, i).abs()).sum())?;
                    check("y", ys[i].abs())?;
                }
                check("w", w.iter().map(|v| v.abs()).sum())
            }
        }
    }

    pub fn to_matrix(&self) -> Matrix {
        let (d, n) = self.dims();
        match self {
            ICLPrompt::Truncated { xs, w, ts } => Matrix::from_fn(2 * d + 1, n, |i, j| {
                if i < d {
                    xs.get(i, j)
                } else if i < 2 * d {
                    w[i - d]
                } else {
                    ts[j]
                }
            }),
            ICLPrompt::Grad { xs, ys, w } => Matrix::from_fn(2 * d + 2, n, |i, j| {
                if i < d {
                    xs.get(i, j)
                } else if i == d {
                    ys[j]
                } else if i < 2 * d + 1 {
                    w[i - d - 1]
                } else {
                    1.0
                }
            }),
        }
    }
}

/// Builds the in-context truncated-linear stack. The weights depend only on
/// (grid, d, n, g_map, epsilon0): w and t arrive through the prompt rows.
/// The anchor ramp is read off the prompt's w block by a rank-one right
/// factor, so the same stack serves every (w, t).
pub fn build_icl_truncated(
    grid: &InterpolationGrid,
    d: usize,
    n: usize,
    g_map: &IndexMapG,
    epsilon0: f64,
) -> Result<AttentionStack> {
    if grid.p <= n {
        return Err(Error::InvalidArgument(format!(
            "precision p = {} must exceed the token count n = {n}",
            grid.p
        )));
    }
    if d == 0 || n == 0 {
        return Err(Error::InvalidArgument("need positive dims".into()));
    }
    let p = grid.p;
    let d_out = g_map.d_out;
    let khat = |k: usize| 0.5 * grid.delta_l * k as f64;

    // carrier rows
    let tok_x = 0; // d rows of x_i
    let tok_t = d; // per-token bias
    let key_w = d + 1; // d rows of khat_k w
    let key_1 = 2 * d + 1; // khat_k
    let lrow = 2 * d + 2; // khat_k (L_k + L_0)
    let val = 2 * d + 3; // d_out anchor-value rows
    let ind = 2 * d + 3 + d_out;
    let total = 2 * d + 4 + d_out;

    let mut left1 = Matrix::zeros(total, 2 * d + 1);
    for r in 0..d {
        left1.set(tok_x + r, r, 1.0); // x block
    }
    left1.set(tok_t, 2 * d, 1.0); // t row
    let mut right1 = Matrix::zeros(n, p);
    for i in 0..n {
        right1.set(i, i, 1.0);
    }
    let mut bias = Matrix::zeros(total, p);
    for i in 0..n {
        bias.set(ind, i, 1.0);
    }
    for k in 0..p {
        bias.set(key_1, k, khat(k));
        bias.set(lrow, k, khat(k) * (grid.anchor(k) + grid.anchor(0)));
        let row = val + g_map.map(k);
        bias.set(row, k, bias.get(row, k) + grid.anchor(k));
    }
    // ramp term: khat_k copies of the prompt's w block
    let mut left2 = Matrix::zeros(total, 2 * d + 1);
    for r in 0..d {
        left2.set(key_w + r, d + r, 1.0);
    }
    let mut right2 = Matrix::zeros(n, p);
    for k in 0..p {
        right2.set(0, k, khat(k));
    }
    let pre = AffineMap::new(left1, bias)
        .with_right(right1)
        .with_extra(left2, right2);

    let hd = d + 2;
    let mut w_q = Matrix::zeros(hd, total);
    for r in 0..d {
        w_q.set(r, tok_x + r, 1.0);
    }
    w_q.set(d, tok_t, 1.0);
    w_q.set(d + 1, ind, 1.0);
    let mut w_k = Matrix::zeros(hd, total);
    for r in 0..d {
        w_k.set(r, key_w + r, 2.0);
    }
    w_k.set(d, key_1, 2.0);
    w_k.set(d + 1, lrow, -1.0);
    let mut w_v = Matrix::zeros(d_out, total);
    for r in 0..d_out {
        w_v.set(r, val + r, 1.0);
    }
    let mut w_o = Matrix::zeros(p, n);
    for i in 0..n {
        w_o.set(i, i, 1.0);
    }
    let beta = single_head_budget_beta(p, grid.delta_l, epsilon0, g_map.is_constant())?;
    let head = AttentionHead::new(w_q, w_k, w_v, w_o, beta);
    Ok(AttentionStack::new(vec![head]).with_pre(pre))
}

/// Grades the in-context stack on one prompt against the clipped oracle.
pub fn verify_icl_truncated(
    grid: &InterpolationGrid,
    g_map: &IndexMapG,
    epsilon0: f64,
    prompt: &ICLPrompt,
) -> Result<ErrorReport> {
    let (d, n) = prompt.dims();
    let (w, ts, xs) = match prompt {
        ICLPrompt::Truncated { xs, w, ts } => (w, ts, xs),
        _ => {
            return Err(Error::InvalidArgument(
                "verify_icl_truncated wants a Truncated prompt".into(),
            ))
        }
    };
    let stack = build_icl_truncated(grid, d, n, g_map, epsilon0)?;
    let out = stack.forward(&prompt.to_matrix())?;
    let m = grid.a.abs().max(grid.b.abs());
    let bound = m * epsilon0 + (grid.b - grid.a) / grid.p as f64;
    let tie_tol = 1e-9 * (1.0 + m);
    let mut per_token = Vec::with_capacity(n);
    for i in 0..n {
        let u: f64 = (0..d).map(|r| w[r] * xs.get(r, i)).sum::<f64>() + ts[i];
        let clipped = clip(u, grid.a, grid.b);
        let k = grid.nearest_anchor(u);
        let mut candidates = vec![k];
        if let Some(k2) = grid.is_tied(u, k, tie_tol) {
            candidates.push(k2);
        }
        let err = candidates
            .iter()
            .map(|&kc| {
                let row = g_map.map(kc);
                (0..g_map.d_out)
                    .map(|r| {
                        let target = if r == row { clipped } else { 0.0 };
                        (out.get(r, i) - target).abs()
                    })
                    .fold(0.0, f64::max)
            })
            .fold(f64::INFINITY, f64::min);
        per_token.push(err);
    }
    Ok(ErrorReport::from_per_token(
        per_token,
        bound,
        !g_map.is_constant(),
    ))
}

/// Per-coordinate ReLU nets approximating the loss-gradient coordinate as a
/// function of (w^T x, y): g_r(u, y) = sum_h ReLU(a_h u + b_h y + c_h).
#[derive(Debug, Clone, PartialEq)]
pub struct GradNetSpec {
    pub d: usize,
    pub h: usize,
    /// coef[r][h] = (a, b, c).
    pub coef: Vec<Vec<(f64, f64, f64)>>,
    pub b_r: f64,
}

impl GradNetSpec {
    pub fn new(coef: Vec<Vec<(f64, f64, f64)>>) -> Result<Self> {
        let d = coef.len();
        if d == 0 || coef[0].is_empty() {
            return Err(Error::InvalidArgument("empty gradient net".into()));
        }
        let h = coef[0].len();
        if coef.iter().any(|c| c.len() != h) {
            return Err(Error::InvalidArgument(
                "all coordinates need the same unit count".into(),
            ));
        }
        let b_r = coef
            .iter()
            .flatten()
            .flat_map(|(a, b, c)| [a.abs(), b.abs(), c.abs()])
            .fold(0.0, f64::max)
            .max(1e-6);
        Ok(GradNetSpec { d, h, coef, b_r })
    }

    pub fn eval(&self, r: usize, u: f64, y: f64) -> f64 {
        self.coef[r]
            .iter()
            .map(|(a, b, c)| (a * u + b * y + c).max(0.0))
            .sum()
    }

    /// The gradient surrogate: coordinate r is (1/n) sum_i g_r(w^T x_i, y_i)
    /// -- scaled into a step by eta outside.
    pub fn aggregate(&self, xs: &Matrix, ys: &[f64], w: &[f64]) -> Vec<f64> {
        let n = xs.cols();
        (0..self.d)
            .map(|r| {
                (0..n)
                    .map(|i| {
                        let u: f64 = (0..self.d).map(|q| w[q] * xs.get(q, i)).sum();
                        self.eval(r, u, ys[i])
                    })
                    .sum::<f64>()
                    / n as f64
            })
            .collect()
    }

    /// One analytic step: w - eta * aggregate.
    pub fn step(&self, xs: &Matrix, ys: &[f64], w: &[f64], eta: f64) -> Vec<f64> {
        let g = self.aggregate(xs, ys, w);
        w.iter().zip(&g).map(|(w, g)| w - eta * g).collect()
    }

    /// Plain-text schema: one unit per line, "r h a b c" with 1-based r and
    /// h; '#' starts a comment. Missing (r, h) pairs are zero units.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        let (mut dmax, mut hmax) = (0usize, 0usize);
        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let toks: Vec<&str> = line.split_whitespace().collect();
            if toks.len() != 5 {
                return Err(Error::Parse(format!(
                    "line {}: want 'r h a b c'",
                    lineno + 1
                )));
            }
            let r: usize = toks[0]
                .parse()
                .map_err(|_| Error::Parse(format!("line {}: bad r", lineno + 1)))?;
            let h: usize = toks[1]
                .parse()
                .map_err(|_| Error::Parse(format!("line {}: bad h", lineno + 1)))?;
            if r == 0 || h == 0 {
                return Err(Error::Parse("r and h are 1-based".into()));
            }
            let mut vals = [0.0; 3];
            for (slot, tok) in vals.iter_mut().zip(&toks[2..]) {
                *slot = tok
                    .parse()
                    .map_err(|_| Error::Parse(format!("line {}: bad number", lineno + 1)))?;
            }
            dmax = dmax.max(r);
            hmax = hmax.max(h);
            entries.push((r - 1, h - 1, vals));
        }
        if entries.is_empty() {
            return Err(Error::Parse("no units in gradient-net file".into()));
        }
        let mut coef = vec![vec![(0.0, 0.0, 0.0); hmax]; dmax];
        for (r, h, v) in entries {
            coef[r][h] = (v[0], v[1], v[2]);
        }
        GradNetSpec::new(coef)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (r, units) in self.coef.iter().enumerate() {
            for (h, (a, b, c)) in units.iter().enumerate() {
                out.push_str(&format!("{} {} {} {} {}\n", r + 1, h + 1, a, b, c));
            }
        }
        out
    }
}

/// Budgets of the gradient layer: eps1 is the per-head attention budget,
/// eps0 the allowance for the net-vs-true-gradient mismatch (zero against
/// the net-defined oracle, but part of the stated bound).
#[derive(Debug, Clone, Copy)]
pub struct IcgdBudget {
    pub eps1: f64,
    pub eps0: f64,
    pub b1: f64,
}

impl Default for IcgdBudget {
    fn default() -> Self {
        IcgdBudget {
            eps1: 0.02,
            eps0: 0.005,
            b1: 2.0,
        }
    }
}

impl IcgdBudget {
    /// d H eps1 + d eps0.
    pub fn bound(&self, d: usize, h: usize) -> f64 {
        d as f64 * h as f64 * self.eps1 + d as f64 * self.eps0
    }

    /// Reachable |a u + b y + c| over admissible prompts; the inner
    /// truncation range [0, R] makes Range = ReLU there.
    pub fn inner_range(&self, b_r: f64) -> f64 {
        b_r * (self.b1 * self.b1 + self.b1 + 1.0)
    }
}

/// One in-context gradient step as a residual attention stack. Weights
/// depend only on (net, eta, d, n, budget); prompts flow through the
/// carrier. Head (h, r) realizes unit h of gradient coordinate r.
pub fn build_icgd_layer(
    net: &GradNetSpec,
    eta: f64,
    n: usize,
    budget: &IcgdBudget,
) -> Result<AttentionStack> {
    let d = net.d;
    if n == 0 || !(eta >= 0.0) {
        return Err(Error::InvalidArgument("need n >= 1 and eta >= 0".into()));
    }
    if d * net.h > MAX_GRAD_HEADS {
        return Err(Error::GuardExceeded(format!(
            "d H = {} exceeds {MAX_GRAD_HEADS} heads",
            d * net.h
        )));
    }
    let r_max = budget.inner_range(net.b_r);
    let eta_amp = eta.max(1.0);
    let eps_inner = budget.eps1 / (2.0 * r_max * eta_amp);
    let p = (n + 1).max((2.0 * r_max * eta_amp / budget.eps1).ceil() as usize);
    let grid = InterpolationGrid::new(0.0, r_max, p)?;
    let beta = beta_for_two_max(p.max(3), grid.delta_l * grid.delta_l / 2.0, eps_inner.min(0.5))?;
    let d_out = 2 * d + 2;
    let khat = |k: usize| 0.5 * grid.delta_l * k as f64;

    let mut heads = Vec::with_capacity(d * net.h);
    for r_coord in 0..d {
        for h_unit in 0..net.h {
            let (a, b, c) = net.coef[r_coord][h_unit];
            // carrier rows
            let tok = 0; // d+2 rows: [a x; b y; 1]
            let key_w = d + 2; // d rows: khat w
            let key_1 = 2 * d + 2;
            let key_c = 2 * d + 3;
            let lrow = 2 * d + 4;
            let val = 2 * d + 5;
            let ind = val + d_out;
            let total = val + d_out + 1;

            let mut left1 = Matrix::zeros(total, 2 * d + 2);
            for q in 0..d {
                left1.set(tok + q, q, a);
            }
            left1.set(tok + d, d, b);
            let mut right1 = Matrix::zeros(n, p);
            for i in 0..n {
                right1.set(i, i, 1.0);
            }
            let mut bias = Matrix::zeros(total, p);
            for i in 0..n {
                bias.set(tok + d + 1, i, 1.0);
                bias.set(ind, i, 1.0);
            }
            for k in 0..p {
                bias.set(key_1, k, khat(k));
                bias.set(key_c, k, khat(k) * c);
                bias.set(lrow, k, khat(k) * (grid.anchor(k) + grid.anchor(0)));
                let row = val + d + 1 + r_coord;
                bias.set(row, k, bias.get(row, k) + grid.anchor(k));
            }
            let mut left2 = Matrix::zeros(total, 2 * d + 2);
            for q in 0..d {
                left2.set(key_w + q, d + 1 + q, 1.0);
            }
            let mut right2 = Matrix::zeros(n, p);
            for k in 0..p {
                right2.set(0, k, khat(k));
            }
            let pre = AffineMap::new(left1, bias)
                .with_right(right1)
                .with_extra(left2, right2);

            let hd = d + 3;
            let mut w_q = Matrix::zeros(hd, total);
            for q in 0..d + 2 {
                w_q.set(q, tok + q, 1.0);
            }
            w_q.set(d + 2, ind, 1.0);
            let mut w_k = Matrix::zeros(hd, total);
            for q in 0..d {
                w_k.set(q, key_w + q, 2.0);
            }
            w_k.set(d, key_1, 2.0);
            w_k.set(d + 1, key_c, 2.0);
            w_k.set(d + 2, lrow, -1.0);
            let mut w_v = Matrix::zeros(d_out, total);
            for q in 0..d_out {
                w_v.set(q, val + q, 1.0);
            }
            // trim padding, then average tokens into a broadcast -eta/n sum
            let mut w_o = Matrix::zeros(p, n);
            for i in 0..n {
                for j in 0..n {
                    w_o.set(i, j, -eta / n as f64);
                }
            }
            heads.push(
                AttentionHead::new(w_q, w_k, w_v, w_o, beta).with_pre(pre),
            );
        }
    }
    Ok(AttentionStack::new(heads).with_residual())
}

/// Target matrix of one analytic step: [x; y; w - eta agg; 1].
pub fn icgd_step_target(net: &GradNetSpec, prompt: &ICLPrompt, eta: f64) -> Result<Matrix> {
    let (xs, ys, w) = match prompt {
        ICLPrompt::Grad { xs, ys, w } => (xs, ys, w),
        _ => {
            return Err(Error::InvalidArgument(
                "icgd wants a Grad prompt".into(),
            ))
        }
    };
    let stepped = net.step(xs, ys, w, eta);
    Ok(ICLPrompt::Grad {
        xs: xs.clone(),
        ys: ys.clone(),
        w: stepped,
    }
    .to_matrix())
}

/// Grades one layer application against the analytic step.
pub fn verify_icgd_step(
    net: &GradNetSpec,
    prompt: &ICLPrompt,
    eta: f64,
    budget: &IcgdBudget,
) -> Result<ErrorReport> {
    prompt.validate(budget.b1)?;
    let (d, n) = prompt.dims();
    if d != net.d {
        return Err(Error::DimensionMismatch("prompt/net dimension".into()));
    }
    let stack = build_icgd_layer(net, eta, n, budget)?;
    let out = stack.forward(&prompt.to_matrix())?;
    let target = icgd_step_target(net, prompt, eta)?;
    let per_token = (0..n)
        .map(|i| {
            (0..out.rows())
                .map(|r| (out.get(r, i) - target.get(r, i)).abs())
                .fold(0.0, f64::max)
        })
        .collect();
    Ok(ErrorReport::from_per_token(
        per_token,
        budget.bound(d, net.h),
        false,
    ))
}

/// Trajectory of a stacked gradient descent: the same layer applied
/// `steps` times, with the analytic recursion as the running oracle.
#[derive(Debug, Clone)]
pub struct TrajectoryReport {
    /// Attention-side w estimate after each step (column mean of the
    /// w-block).
    pub ws: Vec<Vec<f64>>,
    /// Oracle w after each step.
    pub oracle_ws: Vec<Vec<f64>>,
    /// Divergence ||state - oracle state||_inf after each step.
    pub per_step_divergence: Vec<f64>,
    pub cumulative_divergence: f64,
    pub per_step_bound: f64,
    /// Max ratio of successive divergences (1.0 when it never grows).
    pub growth_factor: f64,
}

pub fn stacked_icgd_trajectory(
    net: &GradNetSpec,
    prompt: &ICLPrompt,
    eta: f64,
    steps: usize,
    budget: &IcgdBudget,
) -> Result<TrajectoryReport> {
    if steps == 0 {
        return Err(Error::InvalidArgument("need steps >= 1".into()));
    }
    prompt.validate(budget.b1)?;
    let (d, n) = prompt.dims();
    let (xs, ys, w0) = match prompt {
        ICLPrompt::Grad { xs, ys, w } => (xs.clone(), ys.clone(), w.clone()),
        _ => return Err(Error::InvalidArgument("icgd wants a Grad prompt".into())),
    };
    let stack = build_icgd_layer(net, eta, n, budget)?;
    let mut state = prompt.to_matrix();
    let mut oracle_w = w0;
    let mut ws = Vec::with_capacity(steps);
    let mut oracle_ws = Vec::with_capacity(steps);
    let mut per_step = Vec::with_capacity(steps);
    for _ in 0..steps {
        state = stack.forward(&state)?;
        oracle_w = net.step(&xs, &ys, &oracle_w, eta);
        let oracle_state = ICLPrompt::Grad {
            xs: xs.clone(),
            ys: ys.clone(),
            w: oracle_w.clone(),
        }
        .to_matrix();
        let div = state.sub(&oracle_state)?.max_abs();
        per_step.push(div);
        let w_est: Vec<f64> = (0..d)
            .map(|r| (0..n).map(|i| state.get(d + 1 + r, i)).sum::<f64>() / n as f64)
            .collect();
        ws.push(w_est);
        oracle_ws.push(oracle_w.clone());
    }
    let cumulative = *per_step.last().unwrap();
    let growth = per_step
        .windows(2)
        .map(|w| if w[0] > 1e-300 { w[1] / w[0] } else { 1.0 })
        .fold(1.0f64, f64::max);
    Ok(TrajectoryReport {
        ws,
        oracle_ws,
        per_step_divergence: per_step,
        cumulative_divergence: cumulative,
        per_step_bound: budget.bound(d, net.h),
        growth_factor: growth,
    })
}
