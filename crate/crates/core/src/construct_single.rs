//! Single-head approximator of n per-token truncated linear models.
//!
//! The pre-map embeds each token's reweighted copy (giving every token its
//! own (w_i, t_i) with the bias absorbed into an augmented coordinate), pads
//! the sequence to p columns, and stores the anchor ramp, the selector row,
//! the anchor-value block, and the token indicator row. The head's raw score
//! at (anchor k, token i) equals -(u_i - L_k)^2 / 2 up to a per-column
//! constant, u_i = w_i^T x_i + t_i, so the softmax column concentrates on
//! the nearest anchor. The anchor ramp is scaled by delta_L / 2 to put the
//! scores on exactly that normalization, which is what makes the
//! gamma = delta_L^2 / 2 temperature budget applicable as stated.

use crate::attn::{AffineMap, AttentionHead, AttentionStack};
use crate::error::{Error, Result};
use crate::interp::{clip, IndexMapG, InterpolationGrid, TruncatedLinearModel};
use crate::hardmax::{beta_for_two_max, beta_for_unique_max};
use crate::numkit::Matrix;

/// Everything needed to build and grade one single-head construction.
#[derive(Debug, Clone)]
pub struct SingleHeadPlan {
    pub task: Vec<TruncatedLinearModel>,
    pub grid: InterpolationGrid,
    pub g_map: IndexMapG,
    pub d_out: usize,
    pub epsilon0: f64,
    pub beta: f64,
    /// Set for non-constant G: the budget is the input-dependent unique-max
    /// case and the guarantee excludes an arbitrarily small input region
    /// around selection ties.
    pub case_i_caveat: bool,
}

impl SingleHeadPlan {
    /// Validates the task against the grid and sizes beta from the matching
    /// temperature budget. Requires p >= n (tokens must fit in the padded
    /// sequence; only the theorem's error statement wants strict p > n).
    pub fn new(
        task: Vec<TruncatedLinearModel>,
        grid: InterpolationGrid,
        g_map: IndexMapG,
        epsilon0: f64,
    ) -> Result<Self> {
        if task.is_empty() {
            return Err(Error::InvalidArgument("empty task list".into()));
        }
        let d = task[0].w.len();
        for m in &task {
            if m.w.len() != d {
                return Err(Error::DimensionMismatch(
                    "task models disagree on input dimension".into(),
                ));
            }
            if m.a != grid.a || m.b != grid.b {
                return Err(Error::InvalidArgument(
                    "task truncation range must match the grid".into(),
                ));
            }
        }
        if grid.p < task.len() {
            return Err(Error::InvalidArgument(format!(
                "precision p = {} must be at least the token count n = {}",
                grid.p,
                task.len()
            )));
        }
        if let Some(len) = g_map.len_hint() {
            if len != grid.p {
                return Err(Error::InvalidArgument(
                    "G table length must equal the anchor count".into(),
                ));
            }
        }
        if !(epsilon0 > 0.0 && epsilon0 < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "epsilon0 must lie in (0,1), got {epsilon0}"
            )));
        }
        let case_i_caveat = !g_map.is_constant();
        let beta = single_head_budget_beta(grid.p, grid.delta_l, epsilon0, !case_i_caveat)?;
        let d_out = g_map.d_out;
        Ok(SingleHeadPlan {
            task,
            grid,
            g_map,
            d_out,
            epsilon0,
            beta,
            case_i_caveat,
        })
    }

    pub fn with_beta(mut self, beta: f64) -> Self {
        self.beta = beta;
        self
    }

    pub fn n(&self) -> usize {
        self.task.len()
    }

    pub fn d(&self) -> usize {
        self.task[0].w.len()
    }

    /// The theorem's grading bound: max{|a|,|b|} eps_0 + (b-a)/p.
    pub fn bound(&self) -> f64 {
        let m = self.grid.a.abs().max(self.grid.b.abs());
        m * self.epsilon0 + (self.grid.b - self.grid.a) / self.grid.p as f64
    }
}

/// Temperature budget for the construction's raw-score normalization.
/// Constant G activates the two-leaders case with gamma = delta_L^2 / 2;
/// non-constant G needs a unique leader (ties excluded).
pub fn single_head_budget_beta(
    p: usize,
    delta_l: f64,
    epsilon0: f64,
    constant_g: bool,
) -> Result<f64> {
    let gamma = delta_l * delta_l / 2.0;
    if constant_g {
        beta_for_two_max(p.max(3), gamma, epsilon0)
    } else {
        beta_for_unique_max(p.max(2), gamma, epsilon0)
    }
}

/// Explicit parameters for a requested total error: p = max{n+1,
/// ceil(2(b-a)/eps)} and beta = (2 p^2/(b-a)^2)(ln(p-2) + ln(2M/eps)).
pub fn choose_parameters(n: usize, a: f64, b: f64, epsilon: f64) -> (usize, f64) {
    assert!(a < b && epsilon > 0.0);
    let p = (n + 1).max((2.0 * (b - a) / epsilon).ceil() as usize);
    let m = a.abs().max(b.abs());
    let ln_pm2 = ((p.saturating_sub(2)).max(1) as f64).ln();
    let beta = (2.0 * (p as f64).powi(2) / (b - a).powi(2)) * (ln_pm2 + (2.0 * m / epsilon).ln());
    (p, beta.max(1e-9))
}

/// Row layout of the carrier the pre-map produces.
struct Layout {
    d_aug: usize,
    tok0: usize,
    anc0: usize,
    lrow: usize,
    val0: usize,
    ind: usize,
    total: usize,
}

fn layout(d: usize, d_out: usize) -> Layout {
    let d_aug = d + 1;
    Layout {
        d_aug,
        tok0: 0,
        anc0: d_aug,
        lrow: 2 * d_aug,
        val0: 2 * d_aug + 1,
        ind: 2 * d_aug + 1 + d_out,
        total: 2 * d_aug + d_out + 2,
    }
}

/// Builds the shared pre-map and the head (with the default padding-trim
/// W_O) separately, for callers that re-route the construction: compose a
/// selector into the pre-map, swap W_O, then wrap in a stack.
pub fn single_head_parts(plan: &SingleHeadPlan) -> Result<(AffineMap, AttentionHead)> {
    let n = plan.n();
    let d = plan.d();
    let p = plan.grid.p;
    let d_out = plan.d_out;
    let lay = layout(d, d_out);
    let khat = |k: usize| 0.5 * plan.grid.delta_l * k as f64;

    // pre-map: ((left X) .* scale) right + bias
    let mut left = Matrix::zeros(lay.total, d);
    for r in 0..d {
        left.set(lay.tok0 + r, r, 1.0);
    }
    let mut scale = Matrix::from_fn(lay.total, n, |_, _| 1.0);
    for (i, model) in plan.task.iter().enumerate() {
        for r in 0..d {
            scale.set(lay.tok0 + r, i, model.w[r]);
        }
    }
    let mut right = Matrix::zeros(n, p);
    for i in 0..n {
        right.set(i, i, 1.0);
    }
    let mut bias = Matrix::zeros(lay.total, p);
    for (i, model) in plan.task.iter().enumerate() {
        bias.set(lay.tok0 + d, i, model.t);
        bias.set(lay.ind, i, 1.0);
    }
    for k in 0..p {
        for r in 0..lay.d_aug {
            bias.set(lay.anc0 + r, k, khat(k));
        }
        bias.set(lay.lrow, k, khat(k) * (plan.grid.anchor(k) + plan.grid.anchor(0)));
        let row = lay.val0 + plan.g_map.map(k);
        bias.set(row, k, bias.get(row, k) + plan.grid.anchor(k));
    }
    let pre = AffineMap::new(left, bias)
        .with_scale(scale)
        .with_right(right);

    // query picks [x .* w; t; indicator], key picks [2 khat; -lhat]
    let hd = lay.d_aug + 1;
    let mut w_q = Matrix::zeros(hd, lay.total);
    for r in 0..lay.d_aug {
        w_q.set(r, lay.tok0 + r, 1.0);
    }
    w_q.set(lay.d_aug, lay.ind, 1.0);
    let mut w_k = Matrix::zeros(hd, lay.total);
    for r in 0..lay.d_aug {
        w_k.set(r, lay.anc0 + r, 2.0);
    }
    w_k.set(lay.d_aug, lay.lrow, -1.0);
    let mut w_v = Matrix::zeros(d_out, lay.total);
    for r in 0..d_out {
        w_v.set(r, lay.val0 + r, 1.0);
    }
    let mut w_o = Matrix::zeros(p, n);
    for i in 0..n {
        w_o.set(i, i, 1.0);
    }
    Ok((pre, AttentionHead::new(w_q, w_k, w_v, w_o, plan.beta)))
}

pub fn build_single_head(plan: &SingleHeadPlan) -> Result<AttentionStack> {
    let (pre, head) = single_head_parts(plan)?;
    Ok(AttentionStack::new(vec![head]).with_pre(pre))
}

/// Measured error against the theorem's target, with the bound it must meet.
#[derive(Debug, Clone)]
pub struct ErrorReport {
    pub measured_inf: f64,
    pub bound: f64,
    pub pass: bool,
    pub per_token: Vec<f64>,
    /// Carried over from the plan: grading covered by the unique-max case
    /// only, which excludes an arbitrarily small tie region.
    pub case_i_caveat: bool,
}

impl ErrorReport {
    pub(crate) fn from_per_token(per_token: Vec<f64>, bound: f64, caveat: bool) -> Self {
        let measured_inf = per_token.iter().cloned().fold(0.0, f64::max);
        ErrorReport {
            measured_inf,
            bound,
            pass: measured_inf <= bound,
            per_token,
            case_i_caveat: caveat,
        }
    }
}

/// Grades the construction on X against the clipped-oracle target
/// Range(u_i) e_{G(k_i)}. At an exact selection tie the oracle accepts
/// either tied anchor's routing.
pub fn verify_single_head(plan: &SingleHeadPlan, x: &Matrix) -> Result<ErrorReport> {
    let stack = build_single_head(plan)?;
    let out = stack.forward(x)?;
    grade_against_clipped_oracle(plan, x, &out)
}

pub(crate) fn grade_against_clipped_oracle(
    plan: &SingleHeadPlan,
    x: &Matrix,
    out: &Matrix,
) -> Result<ErrorReport> {
    let n = plan.n();
    if x.rows() != plan.d() || x.cols() != n {
        return Err(Error::DimensionMismatch(format!(
            "input {}x{} against task d={} n={}",
            x.rows(),
            x.cols(),
            plan.d(),
            n
        )));
    }
    if out.rows() != plan.d_out || out.cols() != n {
        return Err(Error::DimensionMismatch("output shape".into()));
    }
    let tie_tol = 1e-9 * (1.0 + plan.grid.a.abs() + plan.grid.b.abs());
    let mut per_token = Vec::with_capacity(n);
    for i in 0..n {
        let xi = x.col_to_vec(i);
        let u = plan.task[i].raw(&xi);
        let clipped = clip(u, plan.grid.a, plan.grid.b);
        let k = plan.grid.nearest_anchor(u);
        let mut candidates = vec![k];
        if let Some(k2) = plan.grid.is_tied(u, k, tie_tol) {
            candidates.push(k2);
        }
        let err = candidates
            .iter()
            .map(|&kc| {
                let target_row = plan.g_map.map(kc);
                (0..plan.d_out)
                    .map(|r| {
                        let target = if r == target_row { clipped } else { 0.0 };
                        (out.get(r, i) - target).abs()
                    })
                    .fold(0.0, f64::max)
            })
            .fold(f64::INFINITY, f64::min);
        per_token.push(err);
    }
    Ok(ErrorReport::from_per_token(
        per_token,
        plan.bound(),
        plan.case_i_caveat,
    ))
}

/// Per input token, the anchor index holding the largest attention score.
/// Softmax is monotone, so this is the raw-score argmax; shifting a column
/// by a constant cannot change it.
pub fn attention_column_argmax(plan: &SingleHeadPlan, x: &Matrix) -> Result<Vec<usize>> {
    let (pre, head) = single_head_parts(plan)?;
    let z = pre.apply(x)?;
    let scores = head.scores(&z)?;
    let n = plan.n();
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let mut best = 0;
        let mut best_v = scores.get(0, i);
        for k in 1..plan.grid.p {
            let v = scores.get(k, i);
            if v > best_v {
                best = k;
                best_v = v;
            }
        }
        out.push(best);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkit::seeding;
    use rand::Rng;

    fn constant_plan(
        task: Vec<TruncatedLinearModel>,
        p: usize,
        epsilon0: f64,
    ) -> SingleHeadPlan {
        let (a, b) = (task[0].a, task[0].b);
        let grid = InterpolationGrid::new(a, b, p).unwrap();
        SingleHeadPlan::new(task, grid, IndexMapG::constant(0, 1).unwrap(), epsilon0).unwrap()
    }

    #[test]
    fn choose_parameters_matches_closed_form() {
        let (p, beta) = choose_parameters(8, -1.0, 1.0, 0.125);
        assert_eq!(p, 32);
        assert!((beta - 3161.0).abs() < 1.0, "beta = {beta}");
        // huge epsilon floors p at n+1
        let (p, _) = choose_parameters(8, -1.0, 1.0, 10.0);
        assert_eq!(p, 9);
        // halving epsilon doubles p past the floor
        let (p1, _) = choose_parameters(2, -1.0, 1.0, 0.1);
        let (p2, _) = choose_parameters(2, -1.0, 1.0, 0.05);
        assert_eq!(p2, 2 * p1);
    }

    #[test]
    fn two_token_scalar_task_hits_anchors() {
        let task = vec![
            TruncatedLinearModel::new(vec![1.0], 0.0, 0.0, 1.0).unwrap(),
            TruncatedLinearModel::new(vec![1.0], 0.0, 0.0, 1.0).unwrap(),
        ];
        let plan = constant_plan(task, 16, 1e-4);
        let x = Matrix::from_rows(&[vec![0.5, 0.25]]).unwrap();
        let report = verify_single_head(&plan, &x).unwrap();
        assert!(report.pass, "errors {:?}", report.per_token);
        // 0.5 and 0.25 are exact anchors of p = 16 on [0,1]
        let out = build_single_head(&plan).unwrap().forward(&x).unwrap();
        assert!((out.get(0, 0) - 0.5).abs() <= plan.bound());
        assert!((out.get(0, 1) - 0.25).abs() <= plan.bound());
    }

    #[test]
    fn endpoint_token_selects_endpoint_anchor() {
        let task = vec![TruncatedLinearModel::new(vec![1.0], 0.0, -1.0, 1.0).unwrap(); 2];
        let plan = constant_plan(task, 12, 1e-4);
        let x = Matrix::from_rows(&[vec![-1.0, -5.0]]).unwrap();
        let report = verify_single_head(&plan, &x).unwrap();
        assert!(report.pass, "errors {:?}", report.per_token);
        let arg = attention_column_argmax(&plan, &x).unwrap();
        assert_eq!(arg, vec![0, 0]);
    }

    #[test]
    fn non_selected_rows_stay_small() {
        // route anchors to distinct rows; tokens pinned to exact anchors so
        // unique-max selection is safe
        let p = 8;
        let task = vec![TruncatedLinearModel::new(vec![1.0], 0.0, 0.0, 1.0).unwrap(); 2];
        let grid = InterpolationGrid::new(0.0, 1.0, p).unwrap();
        let g = IndexMapG::table((0..p).map(|k| k % 3).collect(), 3).unwrap();
        let plan = SingleHeadPlan::new(task, grid, g, 1e-3).unwrap();
        assert!(plan.case_i_caveat);
        let x = Matrix::from_rows(&[vec![0.25, 0.75]]).unwrap(); // anchors 2 and 6
        let out = build_single_head(&plan).unwrap().forward(&x).unwrap();
        let m = 1.0; // max{|a|,|b|}
        for (i, sel) in [(0usize, 2usize % 3), (1usize, 6usize % 3)] {
            for r in 0..3 {
                if r != sel {
                    assert!(
                        out.get(r, i).abs() <= m * plan.epsilon0,
                        "row {r} col {i}: {}",
                        out.get(r, i)
                    );
                }
            }
        }
    }

    #[test]
    fn random_tasks_all_pass() {
        let mut rng = seeding::rng_for(31, 0);
        for trial in 0..40 {
            let d = rng.gen_range(1..4);
            let n = rng.gen_range(1..7);
            let p = n + rng.gen_range(1..20);
            let a = rng.gen_range(-2.0..0.0);
            let b = a + rng.gen_range(0.5..3.0);
            let task: Vec<_> = (0..n)
                .map(|_| {
                    let w: Vec<f64> = (0..d).map(|_| seeding::standard_normal(&mut rng)).collect();
                    TruncatedLinearModel::new(w, 0.3 * seeding::standard_normal(&mut rng), a, b)
                        .unwrap()
                })
                .collect();
            let grid = InterpolationGrid::new(a, b, p).unwrap();
            let plan =
                SingleHeadPlan::new(task, grid, IndexMapG::constant(0, 1).unwrap(), 1e-3).unwrap();
            let x = Matrix::from_fn(d, n, |_, _| rng.gen_range(-2.0..2.0));
            let report = verify_single_head(&plan, &x).unwrap();
            assert!(
                report.pass,
                "trial {trial}: measured {} > bound {}",
                report.measured_inf, report.bound
            );
        }
    }

    #[test]
    fn argmax_matches_nearest_anchor() {
        let mut rng = seeding::rng_for(37, 0);
        let task = vec![TruncatedLinearModel::new(vec![1.0], 0.0, -1.0, 1.0).unwrap(); 5];
        let plan = constant_plan(task, 24, 1e-3);
        for _ in 0..100 {
            let x = Matrix::from_fn(1, 5, |_, _| rng.gen_range(-1.5..1.5));
            let args = attention_column_argmax(&plan, &x).unwrap();
            for i in 0..5 {
                let u = x.get(0, i);
                let k = plan.grid.nearest_anchor(u);
                let ok = args[i] == k
                    || plan
                        .grid
                        .is_tied(u, k, 1e-9)
                        .map(|k2| args[i] == k2)
                        .unwrap_or(false);
                assert!(ok, "token {i}: argmax {} vs nearest {k}", args[i]);
            }
        }
    }

    #[test]
    fn midpoint_tie_selects_either_neighbor() {
        let task = vec![TruncatedLinearModel::new(vec![1.0], 0.0, 0.0, 1.0).unwrap(); 1];
        let plan = constant_plan(task, 10, 1e-3);
        let mid = 0.5 * (plan.grid.anchor(4) + plan.grid.anchor(5));
        let x = Matrix::from_rows(&[vec![mid]]).unwrap();
        let args = attention_column_argmax(&plan, &x).unwrap();
        assert!(args[0] == 4 || args[0] == 5);
        // the verifier's bound still holds at the tie
        let report = verify_single_head(&plan, &x).unwrap();
        assert!(report.pass);
    }

    #[test]
    fn mid_cell_inputs_realize_interpolation_term() {
        // adversarial X just off cell midpoints: the selector locks onto the
        // nearest anchor and the error reaches (up to finite-beta slack)
        // half the interpolation term. Exactly at the midpoint the two-way
        // blend would instead reconstruct u.
        let task = vec![TruncatedLinearModel::new(vec![1.0], 0.0, 0.0, 1.0).unwrap(); 3];
        let plan = constant_plan(task, 8, 1e-6).with_beta(1e6);
        let g = plan.grid.clone();
        let off = 1e-4;
        let x = Matrix::from_rows(&[vec![
            0.5 * (g.anchor(1) + g.anchor(2)) - off,
            0.5 * (g.anchor(3) + g.anchor(4)) - off,
            0.5 * (g.anchor(5) + g.anchor(6)) - off,
        ]])
        .unwrap();
        let report = verify_single_head(&plan, &x).unwrap();
        let interp_term = (g.b - g.a) / g.p as f64;
        assert!(report.pass);
        assert!(
            report.measured_inf >= 0.5 * interp_term - 1e-3,
            "measured {} vs interp term {}",
            report.measured_inf,
            interp_term
        );
    }

    #[test]
    fn rejects_p_below_n() {
        let task = vec![TruncatedLinearModel::new(vec![1.0], 0.0, 0.0, 1.0).unwrap(); 5];
        let grid = InterpolationGrid::new(0.0, 1.0, 4).unwrap();
        assert!(
            SingleHeadPlan::new(task, grid, IndexMapG::constant(0, 1).unwrap(), 1e-3).is_err()
        );
    }

    #[test]
    fn p_equal_n_is_buildable() {
        let task = vec![TruncatedLinearModel::new(vec![1.0], 0.0, 0.0, 1.0).unwrap(); 6];
        let grid = InterpolationGrid::new(0.0, 1.0, 6).unwrap();
        let plan =
            SingleHeadPlan::new(task, grid, IndexMapG::constant(0, 1).unwrap(), 1e-3).unwrap();
        let x = Matrix::from_fn(1, 6, |_, j| j as f64 / 6.0);
        assert!(verify_single_head(&plan, &x).unwrap().pass);
    }
}
