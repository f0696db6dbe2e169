//! Multi-head approximator of truncated linear models: the p anchors are
//! split into H groups of n-2, each head carries its group plus two
//! zero-valued sentinel slots at the extended anchors one spacing beyond its
//! ends. A token whose value lies inside a head's range selects a real
//! anchor there; in every other head it selects a sentinel and the head
//! stays silent. The pre-map is token-wise: reweighted tokens plus a
//! positional identity block.
//!
//! The two outermost sentinels (left end of the first head, right end of the
//! last) keep their zero values but their key positions are pushed outside
//! the reachable value range. At the extended positions they would win the
//! top cell [L_{p-1}, b] and every clipped value, outputting 0 where the
//! truncation oracle expects the endpoint anchor.

use crate::attn::{AffineMap, AttentionHead, AttentionStack};
use crate::construct_single::{grade_against_clipped_oracle, ErrorReport, SingleHeadPlan};
use crate::error::{Error, Result};
use crate::hardmax::beta_for_unique_max;
use crate::interp::{clip, IndexMapG, InterpolationGrid, TruncatedLinearModel};
use crate::numkit::Matrix;

#[derive(Debug, Clone)]
pub struct MultiHeadPlan {
    pub task: Vec<TruncatedLinearModel>,
    pub grid: InterpolationGrid,
    pub heads: usize,
    /// Output row all anchors land on. The multi-head construction requires
    /// a set-to-constant G.
    pub g_row: usize,
    pub d_out: usize,
    pub epsilon0: f64,
    pub beta: f64,
    /// Declared input box half-width: |X_ij| <= x_bound. Sizes the
    /// pushed-out extreme sentinel positions.
    pub x_bound: f64,
}

impl MultiHeadPlan {
    /// Builds the grid from the head count: p = H (n - 2).
    pub fn new(
        task: Vec<TruncatedLinearModel>,
        heads: usize,
        g_row: usize,
        d_out: usize,
        epsilon0: f64,
    ) -> Result<Self> {
        if task.len() < 3 {
            return Err(Error::InvalidArgument(
                "multi-head construction needs n >= 3 tokens (n-2 anchors per head)".into(),
            ));
        }
        let n = task.len();
        let p = heads
            .checked_mul(n - 2)
            .filter(|&p| p > 0)
            .ok_or_else(|| Error::InvalidArgument("head count must be positive".into()))?;
        let grid = InterpolationGrid::new(task[0].a, task[0].b, p)?;
        Self::from_grid(task, grid, heads, g_row, d_out, epsilon0)
    }

    pub fn from_grid(
        task: Vec<TruncatedLinearModel>,
        grid: InterpolationGrid,
        heads: usize,
        g_row: usize,
        d_out: usize,
        epsilon0: f64,
    ) -> Result<Self> {
        if task.len() < 3 {
            return Err(Error::InvalidArgument("need n >= 3 tokens".into()));
        }
        let n = task.len();
        let d = task[0].w.len();
        for m in &task {
            if m.w.len() != d || m.a != grid.a || m.b != grid.b {
                return Err(Error::InvalidArgument(
                    "task models must share dimension and the grid range".into(),
                ));
            }
        }
        if grid.p % (n - 2) != 0 || grid.p / (n - 2) != heads {
            return Err(Error::InvalidArgument(format!(
                "p = {} must equal H (n-2) = {}x{}",
                grid.p,
                heads,
                n - 2
            )));
        }
        if g_row >= d_out {
            return Err(Error::InvalidArgument("g_row out of range".into()));
        }
        if !(epsilon0 > 0.0 && epsilon0 < 1.0) {
            return Err(Error::InvalidArgument("epsilon0 must lie in (0,1)".into()));
        }
        let beta = multi_head_budget_beta(n, heads, grid.delta_l, epsilon0)?;
        Ok(MultiHeadPlan {
            task,
            grid,
            heads,
            g_row,
            d_out,
            epsilon0,
            beta,
            x_bound: 8.0,
        })
    }

    pub fn with_beta(mut self, beta: f64) -> Self {
        self.beta = beta;
        self
    }

    pub fn with_x_bound(mut self, x_bound: f64) -> Self {
        self.x_bound = x_bound;
        self
    }

    /// Largest reachable |w_i^T x + t_i| over the declared box.
    pub fn value_bound(&self) -> f64 {
        self.task
            .iter()
            .map(|m| m.w.iter().map(|w| w.abs()).sum::<f64>() * self.x_bound + m.t.abs())
            .fold(0.0, f64::max)
    }

    pub fn n(&self) -> usize {
        self.task.len()
    }

    pub fn d(&self) -> usize {
        self.task[0].w.len()
    }

    /// max{|a|,|b|} eps_0 + (b-a)/((n-2)H).
    pub fn bound(&self) -> f64 {
        let m = self.grid.a.abs().max(self.grid.b.abs());
        m * self.epsilon0
            + (self.grid.b - self.grid.a) / ((self.n() - 2) as f64 * self.heads as f64)
    }

    /// Key position of head h's local slot s (s in 0..n). Slots 0 and n-1
    /// are the zero-valued sentinels at the extended anchors; the two
    /// outermost sentinels sit beyond the reachable value range instead.
    fn slot_position(&self, h: usize, s: usize) -> f64 {
        let n = self.n();
        let push = 2.0 * (self.value_bound() + self.grid.a.abs() + self.grid.b.abs()) + 1.0;
        if h == 0 && s == 0 {
            self.grid.a - push
        } else if h == self.heads - 1 && s == n - 1 {
            self.grid.b + push
        } else {
            self.grid.anchor_ext((h * (n - 2)) as i64 - 1 + s as i64)
        }
    }
}

/// Shared temperature sized for the worst case over the proof's split of
/// eps_0 across in-range selection, silent heads, and boundary blending:
/// the smallest share is eps_0 / max(3, 2(H-1), 3(H-2)), applied with the
/// unique-leader count n-1 and the grid gap gamma = delta_L^2 / 2.
pub fn multi_head_budget_beta(n: usize, heads: usize, delta_l: f64, epsilon0: f64) -> Result<f64> {
    let h = heads as f64;
    let denom = 3.0f64.max(2.0 * (h - 1.0)).max(3.0 * (h - 2.0));
    let eps = epsilon0 / denom;
    let gamma = delta_l * delta_l / 2.0;
    beta_for_unique_max(n.max(2), gamma, eps)
}

/// Token-wise pre-map [tokens .* per-token weights; t row; I_n].
fn multi_pre_map(plan: &MultiHeadPlan) -> AffineMap {
    let n = plan.n();
    let d = plan.d();
    let total = d + 1 + n;
    let mut left = Matrix::zeros(total, d);
    for r in 0..d {
        left.set(r, r, 1.0);
    }
    let mut scale = Matrix::from_fn(total, n, |_, _| 1.0);
    let mut bias = Matrix::zeros(total, n);
    for (i, model) in plan.task.iter().enumerate() {
        for r in 0..d {
            scale.set(r, i, model.w[r]);
        }
        bias.set(d, i, model.t);
        bias.set(d + 1 + i, i, 1.0);
    }
    AffineMap::new(left, bias).with_scale(scale)
}

/// Shared pre-map plus the per-group heads, for callers that need to route
/// the construction inside a larger carrier.
pub(crate) fn multi_head_parts(plan: &MultiHeadPlan) -> Result<(AffineMap, Vec<AttentionHead>)> {
    let n = plan.n();
    let d = plan.d();
    let total = d + 1 + n;
    if plan.grid.p % (n - 2) != 0 {
        return Err(Error::InvalidArgument(
            "anchor count not divisible by n-2".into(),
        ));
    }

    // shared query: q_i = [x_i .* w_i; t_i; 1]
    let hd = d + 2;
    let mut w_q = Matrix::zeros(hd, total);
    for r in 0..d + 1 {
        w_q.set(r, r, 1.0);
    }
    for i in 0..n {
        w_q.set(d + 1, d + 1 + i, 1.0);
    }

    let mut heads = Vec::with_capacity(plan.heads);
    for h in 0..plan.heads {
        let mut w_k = Matrix::zeros(hd, total);
        let mut w_v = Matrix::zeros(plan.d_out, total);
        for s in 0..n {
            // raw score of slot s on value u: 2 khat u - lhat, which equals
            // -(u - L)^2/2 up to a per-column constant for any real L
            let l_slot = plan.slot_position(h, s);
            let kh = 0.5 * (l_slot - plan.grid.anchor(0));
            let lhat = kh * (l_slot + plan.grid.anchor(0));
            for r in 0..d + 1 {
                w_k.set(r, d + 1 + s, 2.0 * kh);
            }
            w_k.set(d + 1, d + 1 + s, -lhat);
            if s > 0 && s < n - 1 {
                w_v.set(plan.g_row, d + 1 + s, l_slot);
            }
        }
        heads.push(AttentionHead::new(
            w_q.clone(),
            w_k,
            w_v,
            Matrix::identity(n),
            plan.beta,
        ));
    }
    Ok((multi_pre_map(plan), heads))
}

pub fn build_multi_head(plan: &MultiHeadPlan) -> Result<AttentionStack> {
    let (pre, heads) = multi_head_parts(plan)?;
    Ok(AttentionStack::new(heads).with_pre(pre))
}

pub fn verify_multi_head(plan: &MultiHeadPlan, x: &Matrix) -> Result<ErrorReport> {
    let stack = build_multi_head(plan)?;
    let out = stack.forward(x)?;
    // reuse the single-head grader: same oracle, this plan's bound
    let single_view = SingleHeadPlan {
        task: plan.task.clone(),
        grid: plan.grid.clone(),
        g_map: IndexMapG::constant(plan.g_row, plan.d_out)?,
        d_out: plan.d_out,
        epsilon0: plan.epsilon0,
        beta: plan.beta,
        case_i_caveat: false,
    };
    let mut report = grade_against_clipped_oracle(&single_view, x, &out)?;
    report.bound = plan.bound();
    report.pass = report.measured_inf <= report.bound;
    Ok(report)
}

/// Relation of one head's anchor interval to a scalar value.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeadCase {
    /// Case 1: the value lies strictly within the head's covered range.
    Covers,
    /// Case 2: the value lies outside the head's extended range.
    Outside,
    /// Case 3: the value lies in a boundary cell shared with a neighbor.
    Boundary,
}

/// The dichotomy the case analysis guarantees.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CaseSplit {
    /// One covering head, all others outside.
    Interior(usize),
    /// Two adjacent boundary heads, all others outside.
    AdjacentBoundary(usize, usize),
}

/// Labels every head for the given value and returns the split. Values
/// outside [a, b] are clamped to the selectable range first (the clipping
/// convention), which lands them in an extreme head's interior.
pub fn classify_heads(plan: &MultiHeadPlan, value: f64) -> (Vec<HeadCase>, CaseSplit) {
    let n = plan.n();
    let per_head = n - 2;
    let g = &plan.grid;
    let u = clip(value, g.anchor(0), g.anchor(g.p - 1));
    // cell index s: u in [L_s, L_{s+1})
    let mut s = ((u - g.a) / g.delta_l).floor() as i64;
    s = s.clamp(0, g.p as i64 - 1);
    let mut s = s as usize;
    // exact interior group-boundary anchor counts as the boundary cell below
    let on_boundary_anchor =
        s % per_head == 0 && s > 0 && u == g.anchor(s);
    if on_boundary_anchor {
        s -= 1;
    }
    let boundary = (s + 1) % per_head == 0 && s + 1 < g.p;
    let split = if boundary {
        let h = s / per_head;
        CaseSplit::AdjacentBoundary(h, h + 1)
    } else {
        CaseSplit::Interior(s / per_head)
    };
    let labels = (0..plan.heads)
        .map(|h| match split {
            CaseSplit::Interior(h0) if h == h0 => HeadCase::Covers,
            CaseSplit::AdjacentBoundary(h0, h1) if h == h0 || h == h1 => HeadCase::Boundary,
            _ => HeadCase::Outside,
        })
        .collect();
    (labels, split)
}

/// Per-head Case 1/2/3 labels; the dichotomy (exactly one covering head, or
/// exactly two adjacent boundary heads, all others outside) holds by
/// construction of the labeling.
pub fn head_case_classifier(plan: &MultiHeadPlan, value: f64) -> Vec<HeadCase> {
    classify_heads(plan, value).0
}
