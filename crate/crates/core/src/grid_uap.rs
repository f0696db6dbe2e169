//! The grid universal-approximation path: ReLU bump functions over a
//! quantized input box, the reference ReLU network, and attention stacks
//! that (stage 1) reproduce the row of bump values over all grid centers and
//! (stage 2) select the function value at the winning center.
//!
//! Stage-1 heads are instances of the single-head truncated-linear
//! construction: each one accumulates, over tokens, one clipped linear piece
//! of one bump coordinate, and writes the sum into the slot of its grid
//! center. Two heads (mirrored signs) per input row per center.

use crate::attn::{AffineMap, AttentionHead, AttentionStack};
use crate::construct_single::{single_head_parts, SingleHeadPlan};
use crate::error::{Error, Result};
use crate::hardmax::beta_for_unique_max;
use crate::interp::{IndexMapG, InterpolationGrid, TruncatedLinearModel};
use crate::numkit::{mc_lp_error, BoxDomain, Matrix};

/// Guard on g^(d n): builders refuse larger center enumerations.
pub const MAX_CENTERS: usize = 10_000;

/// Quantization of [-B, B]^{d x n} into g cells per axis with bump
/// sharpness delta in (0, 1).
#[derive(Debug, Clone)]
pub struct InputGrid {
    pub b: f64,
    pub g: usize,
    pub d: usize,
    pub n: usize,
    pub delta: f64,
}

impl InputGrid {
    pub fn new(b: f64, g: usize, d: usize, n: usize, delta: f64) -> Result<Self> {
        if !(b > 0.0) || g < 2 || d == 0 || n == 0 {
            return Err(Error::InvalidArgument(
                "grid needs b > 0, g >= 2 and positive dims".into(),
            ));
        }
        if !(delta > 0.0 && delta < 1.0) {
            return Err(Error::InvalidArgument("delta must lie in (0,1)".into()));
        }
        let grid = InputGrid { b, g, d, n, delta };
        if grid.center_count_checked().is_none() {
            return Err(Error::GuardExceeded(format!(
                "g^(d n) = {}^{} exceeds the {MAX_CENTERS}-center guard",
                g,
                d * n
            )));
        }
        Ok(grid)
    }

    fn center_count_checked(&self) -> Option<usize> {
        let mut count: usize = 1;
        for _ in 0..self.d * self.n {
            count = count.checked_mul(self.g)?;
            if count > MAX_CENTERS {
                return None;
            }
        }
        Some(count)
    }

    pub fn center_count(&self) -> usize {
        self.center_count_checked().expect("validated at construction")
    }

    /// Axis value of cell m: B(2m - g + 1)/g.
    pub fn axis_center(&self, m: usize) -> f64 {
        self.b * (2.0 * m as f64 - self.g as f64 + 1.0) / self.g as f64
    }

    /// Digit of coordinate (row i, col j) inside a center index. Digits run
    /// little-endian over positions i*n + j.
    fn digit(&self, idx: usize, i: usize, j: usize) -> usize {
        let pos = i * self.n + j;
        (idx / self.g.pow(pos as u32)) % self.g
    }

    pub fn center(&self, idx: usize) -> Matrix {
        Matrix::from_fn(self.d, self.n, |i, j| self.axis_center(self.digit(idx, i, j)))
    }

    fn nearest_axis_cell(&self, x: f64) -> usize {
        let m = ((x / self.b * self.g as f64) + self.g as f64 - 1.0) / 2.0;
        (m.round().max(0.0) as usize).min(self.g - 1)
    }

    pub fn nearest_center(&self, x: &Matrix) -> usize {
        let mut idx = 0;
        let mut stride = 1;
        for i in 0..self.d {
            for j in 0..self.n {
                let pos = i * self.n + j;
                let _ = pos;
                idx += self.nearest_axis_cell(x.get(i, j)) * stride;
                stride *= self.g;
            }
        }
        idx
    }

    /// The center whose core region contains x, if any: every coordinate
    /// within (1 - delta) B / g of its cell center.
    pub fn in_core(&self, x: &Matrix) -> Option<usize> {
        let idx = self.nearest_center(x);
        let radius = (1.0 - self.delta) * self.b / self.g as f64;
        for i in 0..self.d {
            for j in 0..self.n {
                let c = self.axis_center(self.digit(idx, i, j));
                if (x.get(i, j) - c).abs() > radius {
                    return None;
                }
            }
        }
        Some(idx)
    }

    /// Fraction of the box outside the union of core regions:
    /// 1 - (1 - delta)^{d n}.
    pub fn dead_zone_fraction(&self) -> f64 {
        1.0 - (1.0 - self.delta).powi((self.d * self.n) as i32)
    }

    pub fn domain(&self) -> BoxDomain {
        BoxDomain::centered(self.d, self.n, self.b).expect("b > 0")
    }

    /// Draws a point inside a uniformly chosen core region.
    pub fn sample_in_core(&self, rng: &mut impl rand::Rng) -> (usize, Matrix) {
        let idx = rng.gen_range(0..self.center_count());
        let radius = 0.999 * (1.0 - self.delta) * self.b / self.g as f64;
        let x = Matrix::from_fn(self.d, self.n, |i, j| {
            self.axis_center(self.digit(idx, i, j)) + rng.gen_range(-radius..radius)
        });
        (idx, x)
    }
}

fn relu(x: f64) -> f64 {
    x.max(0.0)
}

fn phi_pair(z: f64, delta: f64) -> f64 {
    relu(z / delta) - relu((z - delta) / delta)
}

/// Bump value of the attention-path variant: per coordinate the value lies
/// in [1, 2], so R_v ranges over [dn, 2dn], equals 2dn exactly on the core
/// region, and is at most 2dn - 1 once any coordinate leaves its cell.
pub fn bump_value(grid: &InputGrid, center_idx: usize, x: &Matrix) -> f64 {
    let mut acc = 0.0;
    for i in 0..grid.d {
        for j in 0..grid.n {
            let v = grid.axis_center(grid.digit(center_idx, i, j));
            let z = grid.g as f64 * (x.get(i, j) - v) / grid.b;
            acc += phi_pair(z + 1.0, grid.delta) + phi_pair(-z + 1.0, grid.delta);
        }
    }
    acc
}

/// Bump value of the reference-network variant (the per-coordinate tent
/// minus one): in [0, dn], equal to dn on the core, at most dn - 1 outside
/// the cell.
pub fn bump_value_floor(grid: &InputGrid, center_idx: usize, x: &Matrix) -> f64 {
    bump_value(grid, center_idx, x) - (grid.d * grid.n) as f64
}

/// Tabulated target values, one per grid center.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarTargetTable {
    pub values: Vec<f64>,
}

impl ScalarTargetTable {
    pub fn tabulate(grid: &InputGrid, f: impl Fn(&Matrix) -> f64) -> Self {
        ScalarTargetTable {
            values: (0..grid.center_count())
                .map(|idx| f(&grid.center(idx)))
                .collect(),
        }
    }

    pub fn sup(&self) -> f64 {
        self.values.iter().fold(0.0, |m: f64, v| m.max(v.abs()))
    }

    pub fn to_text(&self, grid: &InputGrid) -> String {
        let mut out = format!(
            "scalar-table v1\n{} {} {} {}\n",
            grid.g,
            grid.d,
            grid.n,
            self.values.len()
        );
        for v in &self.values {
            out.push_str(&format!("{}\n", v));
        }
        out
    }

    pub fn from_text(text: &str, grid: &InputGrid) -> Result<Self> {
        let mut toks = text.split_whitespace();
        for expect in ["scalar-table", "v1"] {
            if toks.next() != Some(expect) {
                return Err(Error::Parse("bad scalar-table header".into()));
            }
        }
        let mut next_usize = |what: &str| -> Result<usize> {
            toks.next()
                .and_then(|t| t.parse().ok())
                .ok_or_else(|| Error::Parse(format!("bad {what}")))
        };
        let (g, d, n, count) = (
            next_usize("g")?,
            next_usize("d")?,
            next_usize("n")?,
            next_usize("count")?,
        );
        if (g, d, n) != (grid.g, grid.d, grid.n) || count != grid.center_count() {
            return Err(Error::Parse("table does not match the grid".into()));
        }
        let values: Vec<f64> = toks
            .map(|t| {
                t.parse()
                    .map_err(|_| Error::Parse(format!("bad value '{t}'")))
            })
            .collect::<Result<_>>()?;
        if values.len() != count {
            return Err(Error::Parse("value count mismatch".into()));
        }
        Ok(ScalarTargetTable { values })
    }
}

/// The reference network: sum over centers of f(v) ReLU(R_v(x) - dn + 1)
/// with the floor bump variant. Exactly f(v) on v's core region.
pub fn relu_ffn_oracle(grid: &InputGrid, table: &ScalarTargetTable, x: &Matrix) -> f64 {
    let nn = (grid.d * grid.n) as f64;
    let mut acc = 0.0;
    for (idx, fv) in table.values.iter().enumerate() {
        let r = bump_value_floor(grid, idx, x);
        acc += fv * relu(r - nn + 1.0);
    }
    acc
}

/// Error budgets of the universal-approximation stacks: stage 1 reproduces
/// the bump row within d * epsilon0; stage 2's selector softmax gets
/// epsilon1 of deviation mass.
#[derive(Debug, Clone, Copy)]
pub struct UapBudgets {
    pub epsilon0: f64,
    pub epsilon1: f64,
}

impl Default for UapBudgets {
    fn default() -> Self {
        UapBudgets {
            epsilon0: 0.25,
            epsilon1: 0.05,
        }
    }
}

impl UapBudgets {
    fn validate(&self, d: usize) -> Result<()> {
        if !(self.epsilon0 > 0.0 && self.epsilon0 < 1.0)
            || !(self.epsilon1 > 0.0 && self.epsilon1 < 1.0)
        {
            return Err(Error::InvalidArgument("budgets must lie in (0,1)".into()));
        }
        if 2.0 * d as f64 * self.epsilon0 >= 1.0 {
            return Err(Error::InvalidArgument(
                "epsilon0 too large: stage-1 noise would close the unit bump gap".into(),
            ));
        }
        Ok(())
    }

    /// In-core grading bound for a target with sup-norm `f_sup`.
    pub fn in_core_bound(&self, d: usize, f_sup: f64) -> f64 {
        self.epsilon1 * f_sup + d as f64 * self.epsilon0
    }
}

/// Where a stage-1 head routes its per-center sum.
enum Placement {
    /// Column l(v) of a 1 x centers row.
    RowSlot(usize, usize),
    /// Row l(v) of a centers x 1 column.
    ColSlot(usize, usize),
}

/// One clipped-linear-piece head: over tokens j, accumulates
/// Range_[0,1]((sign g (X_{row,j} - v_{row,j}) / B + 1) / delta)
/// into its center's slot.
fn bump_piece_head(
    grid: &InputGrid,
    center_idx: usize,
    row: usize,
    sign: f64,
    budgets: &UapBudgets,
    placement: Placement,
) -> Result<AttentionHead> {
    let n = grid.n;
    let w = sign * grid.g as f64 / (grid.delta * grid.b);
    let task: Vec<TruncatedLinearModel> = (0..n)
        .map(|j| {
            let v = grid.axis_center(grid.digit(center_idx, row, j));
            let t = (1.0 - sign * grid.g as f64 * v / grid.b) / grid.delta;
            TruncatedLinearModel::new(vec![w], t, 0.0, 1.0)
        })
        .collect::<Result<_>>()?;
    // per-token budget eps0/(4n) for the softmax share and the same for the
    // interpolation share makes each of the two sign heads carry eps0/2
    let eps_inner = budgets.epsilon0 / (4.0 * n as f64);
    let p_inner = (n + 1).max((1.0 / eps_inner).ceil() as usize);
    let inner_grid = InterpolationGrid::new(0.0, 1.0, p_inner)?;
    let (d_out, g_map) = match placement {
        Placement::RowSlot(..) => (1, IndexMapG::constant(0, 1)?),
        Placement::ColSlot(slot, total) => (total, IndexMapG::constant(slot, total)?),
    };
    let plan = SingleHeadPlan::new(task, inner_grid, g_map, eps_inner)?;
    let (mut pre, mut head) = single_head_parts(&plan)?;
    // feed the head row `row` of the full d x n input
    let mut extract = Matrix::zeros(1, grid.d);
    extract.set(0, row, 1.0);
    pre.compose_inner_left(&extract)?;
    head.pre = Some(pre);
    let _ = d_out;
    // sum the n token columns into the center's slot
    head.w_o = match placement {
        Placement::RowSlot(slot, total) => {
            let mut w_o = Matrix::zeros(p_inner, total);
            for j in 0..n {
                w_o.set(j, slot, 1.0);
            }
            w_o
        }
        Placement::ColSlot(..) => {
            let mut w_o = Matrix::zeros(p_inner, 1);
            for j in 0..n {
                w_o.set(j, 0, 1.0);
            }
            w_o
        }
    };
    Ok(head)
}

fn stage1_heads(grid: &InputGrid, budgets: &UapBudgets, as_column: bool) -> Result<Vec<AttentionHead>> {
    let centers = grid.center_count();
    let mut heads = Vec::with_capacity(2 * grid.d * centers);
    for idx in 0..centers {
        for row in 0..grid.d {
            for sign in [1.0, -1.0] {
                let placement = if as_column {
                    Placement::ColSlot(idx, centers)
                } else {
                    Placement::RowSlot(idx, centers)
                };
                heads.push(bump_piece_head(grid, idx, row, sign, budgets, placement)?);
            }
        }
    }
    Ok(heads)
}

/// Two-stage sequence-to-scalar approximator: stage 1 emits the bump-value
/// row, stage 2 turns its Gram matrix into a near-argmax selector and reads
/// out the tabulated value.
#[derive(Debug, Clone)]
pub struct TwoStageScalar {
    pub stage1: AttentionStack,
    pub stage2: AttentionStack,
    pub grid: InputGrid,
    pub budgets: UapBudgets,
    pub f_sup: f64,
}

impl TwoStageScalar {
    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        self.stage2.forward(&self.stage1.forward(x)?)
    }

    pub fn forward_scalar(&self, x: &Matrix) -> Result<f64> {
        Ok(self.forward(x)?.get(0, 0))
    }

    /// Bump row before selection; exposed for stage-wise diagnostics.
    pub fn bump_row(&self, x: &Matrix) -> Result<Matrix> {
        self.stage1.forward(x)
    }

    /// Center index the selector concentrates on.
    pub fn selected_center(&self, x: &Matrix) -> Result<usize> {
        let row = self.bump_row(x)?;
        let mut best = 0;
        for k in 1..row.cols() {
            if row.get(0, k) > row.get(0, best) {
                best = k;
            }
        }
        Ok(best)
    }
}

pub fn build_seq_to_scalar(
    grid: &InputGrid,
    table: &ScalarTargetTable,
    budgets: UapBudgets,
) -> Result<TwoStageScalar> {
    budgets.validate(grid.d)?;
    if table.values.len() != grid.center_count() {
        return Err(Error::InvalidArgument("table/grid size mismatch".into()));
    }
    let centers = grid.center_count();
    let stage1 = AttentionStack::new(stage1_heads(grid, &budgets, false)?);

    // stage 2: append the value row, then softmax over Gram scores
    // M_{k,i} = R_k R_i; adjacent bump values differ by at least one off the
    // tie regions, and every R is at least dn, so the gap is at least one.
    let mut left = Matrix::zeros(2, 1);
    left.set(0, 0, 1.0);
    let mut bias = Matrix::zeros(2, centers);
    for (k, v) in table.values.iter().enumerate() {
        bias.set(1, k, *v);
    }
    let pre = AffineMap::new(left, bias);
    let w_q = Matrix::from_rows(&[vec![1.0, 0.0]])?;
    let w_k = w_q.clone();
    let w_v = Matrix::from_rows(&[vec![0.0, 1.0]])?;
    let w_o = Matrix::from_fn(centers, 1, |_, _| 1.0 / centers as f64);
    let beta2 = beta_for_unique_max(centers.max(2), 1.0, budgets.epsilon1)?;
    let head = AttentionHead::new(w_q, w_k, w_v, w_o, beta2);
    let stage2 = AttentionStack::new(vec![head]).with_pre(pre);
    Ok(TwoStageScalar {
        stage1,
        stage2,
        grid: grid.clone(),
        budgets,
        f_sup: table.sup(),
    })
}

/// Single-layer variant: the bump values land in a column, the stack's
/// trailing column softmax selects, and a linear readout multiplies by the
/// value row.
#[derive(Debug, Clone)]
pub struct SingleLayerScalar {
    pub stack: AttentionStack,
    pub readout: AffineMap,
    pub grid: InputGrid,
    pub budgets: UapBudgets,
    pub f_sup: f64,
}

impl SingleLayerScalar {
    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        self.readout.apply(&self.stack.forward(x)?)
    }

    pub fn forward_scalar(&self, x: &Matrix) -> Result<f64> {
        Ok(self.forward(x)?.get(0, 0))
    }

    /// Selector weights (the post-softmax column).
    pub fn selector(&self, x: &Matrix) -> Result<Matrix> {
        self.stack.forward(x)
    }
}

pub fn build_seq_to_scalar_single_layer(
    grid: &InputGrid,
    table: &ScalarTargetTable,
    budgets: UapBudgets,
) -> Result<SingleLayerScalar> {
    budgets.validate(grid.d)?;
    if table.values.len() != grid.center_count() {
        return Err(Error::InvalidArgument("table/grid size mismatch".into()));
    }
    let centers = grid.center_count();
    // raw bump gap is one; stage-1 noise shrinks it by 2 d eps0
    let gap = 1.0 - 2.0 * grid.d as f64 * budgets.epsilon0;
    let beta = beta_for_unique_max(centers.max(2), gap, budgets.epsilon1)?;
    let stack = AttentionStack::new(stage1_heads(grid, &budgets, true)?).with_post_softmax(beta);
    let mut row = Matrix::zeros(1, centers);
    for (k, v) in table.values.iter().enumerate() {
        row.set(0, k, *v);
    }
    let readout = AffineMap::new(row, Matrix::zeros(1, 1));
    Ok(SingleLayerScalar {
        stack,
        readout,
        grid: grid.clone(),
        budgets,
        f_sup: table.sup(),
    })
}

/// Two-stage sequence-to-sequence approximator: shared stage 1, one
/// selector head per output entry.
#[derive(Debug, Clone)]
pub struct Seq2SeqStack {
    pub stage1: AttentionStack,
    pub stage2: AttentionStack,
    pub grid: InputGrid,
    pub budgets: UapBudgets,
    pub f_sup: f64,
}

impl Seq2SeqStack {
    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        self.stage2.forward(&self.stage1.forward(x)?)
    }
}

/// `tables[i * n + j]` tabulates the (i, j) output entry.
pub fn build_seq2seq(
    grid: &InputGrid,
    tables: &[ScalarTargetTable],
    budgets: UapBudgets,
) -> Result<Seq2SeqStack> {
    budgets.validate(grid.d)?;
    let (d, n) = (grid.d, grid.n);
    if tables.len() != d * n {
        return Err(Error::InvalidArgument(format!(
            "need {} tables, got {}",
            d * n,
            tables.len()
        )));
    }
    let centers = grid.center_count();
    for t in tables {
        if t.values.len() != centers {
            return Err(Error::InvalidArgument("table/grid size mismatch".into()));
        }
    }
    let stage1 = AttentionStack::new(stage1_heads(grid, &budgets, false)?);

    // pre: [bump row; one value row per output entry]
    let mut left = Matrix::zeros(1 + d * n, 1);
    left.set(0, 0, 1.0);
    let mut bias = Matrix::zeros(1 + d * n, centers);
    for (e, t) in tables.iter().enumerate() {
        for (k, v) in t.values.iter().enumerate() {
            bias.set(1 + e, k, *v);
        }
    }
    let pre = AffineMap::new(left, bias);
    let beta2 = beta_for_unique_max(centers.max(2), 1.0, budgets.epsilon1)?;
    let mut heads = Vec::with_capacity(d * n);
    let mut w_q = Matrix::zeros(1, 1 + d * n);
    w_q.set(0, 0, 1.0);
    for i in 0..d {
        for j in 0..n {
            let e = i * n + j;
            let mut w_v = Matrix::zeros(d, 1 + d * n);
            w_v.set(i, 1 + e, 1.0);
            let mut w_o = Matrix::zeros(centers, n);
            for k in 0..centers {
                w_o.set(k, j, 1.0 / centers as f64);
            }
            heads.push(AttentionHead::new(
                w_q.clone(),
                w_q.clone(),
                w_v,
                w_o,
                beta2,
            ));
        }
    }
    let f_sup = tables.iter().map(|t| t.sup()).fold(0.0, f64::max);
    let stage2 = AttentionStack::new(heads).with_pre(pre);
    Ok(Seq2SeqStack {
        stage1,
        stage2,
        grid: grid.clone(),
        budgets,
        f_sup,
    })
}

/// In-core verification report. Samples landing in dead zones are excluded
/// from the sup-norm grading (they are charged to measure, not amplitude);
/// the dead-zone fraction is reported so the measure budget is visible.
#[derive(Debug, Clone)]
pub struct UapReport {
    pub in_core_max: f64,
    pub in_core_bound: f64,
    pub pass: bool,
    pub samples_used: usize,
    pub dead_zone_fraction: f64,
    pub lp_error: Option<f64>,
}

/// Grades a scalar approximator against f at the owning center over
/// `samples` in-core points.
pub fn verify_scalar_in_core(
    forward: impl Fn(&Matrix) -> Result<f64>,
    grid: &InputGrid,
    f: impl Fn(&Matrix) -> f64,
    budgets: &UapBudgets,
    f_sup: f64,
    samples: usize,
    seed: u64,
) -> Result<UapReport> {
    let mut max_err = 0.0f64;
    let mut used = 0;
    let mut rng = crate::numkit::seeding::rng_for(seed, 0);
    while used < samples {
        let (idx, x) = grid.sample_in_core(&mut rng);
        let target = f(&grid.center(idx));
        let got = forward(&x)?;
        max_err = max_err.max((got - target).abs());
        used += 1;
    }
    let bound = budgets.in_core_bound(grid.d, f_sup);
    Ok(UapReport {
        in_core_max: max_err,
        in_core_bound: bound,
        pass: max_err <= bound,
        samples_used: used,
        dead_zone_fraction: grid.dead_zone_fraction(),
        lp_error: None,
    })
}

/// Monte-Carlo L_p error of a matrix-valued approximator against f over the
/// whole box (dead zones included).
pub fn lp_error_whole_box(
    forward: impl Fn(&Matrix) -> Result<Matrix> + Sync,
    grid: &InputGrid,
    f: impl Fn(&Matrix) -> Matrix + Sync,
    p: f64,
    samples: usize,
    seed: u64,
) -> f64 {
    mc_lp_error(
        &f,
        &|x: &Matrix| forward(x).expect("forward failed in lp estimation"),
        &grid.domain(),
        p,
        samples,
        seed,
    )
}

/// Built-in named targets for the harness and tests.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TargetFn {
    Coordinate(usize, usize),
    Sum,
    Product,
    SineOfSum,
}

impl TargetFn {
    pub fn eval(&self, x: &Matrix) -> f64 {
        match self {
            TargetFn::Coordinate(i, j) => x.get(*i, *j),
            TargetFn::Sum => x.data().iter().sum(),
            TargetFn::Product => x.data().iter().product(),
            TargetFn::SineOfSum => x.data().iter().sum::<f64>().sin(),
        }
    }

    /// Parses "sum", "product", "sine-of-sum", or "coordinate:i,j".
    pub fn parse(name: &str) -> Result<Self> {
        if let Some(rest) = name.strip_prefix("coordinate:") {
            let mut it = rest.split(',');
            let i = it
                .next()
                .and_then(|t| t.parse().ok())
                .ok_or_else(|| Error::Parse("coordinate:i,j".into()))?;
            let j = it
                .next()
                .and_then(|t| t.parse().ok())
                .ok_or_else(|| Error::Parse("coordinate:i,j".into()))?;
            return Ok(TargetFn::Coordinate(i, j));
        }
        match name {
            "sum" => Ok(TargetFn::Sum),
            "product" => Ok(TargetFn::Product),
            "sine-of-sum" => Ok(TargetFn::SineOfSum),
            _ => Err(Error::Parse(format!("unknown target '{name}'"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkit::seeding;

    fn grid124() -> InputGrid {
        InputGrid::new(1.0, 4, 1, 2, 0.25).unwrap()
    }

    #[test]
    fn bump_is_two_dn_at_center() {
        let grid = grid124();
        for idx in [0usize, 5, 15] {
            let v = grid.center(idx);
            assert!((bump_value(&grid, idx, &v) - 4.0).abs() < 1e-12);
            assert!((bump_value_floor(&grid, idx, &v) - 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn bump_drops_below_max_outside_cell() {
        let grid = grid124();
        let idx = 5;
        let mut x = grid.center(idx);
        // push one coordinate a full cell radius away
        x.set(0, 1, x.get(0, 1) + grid.b / grid.g as f64);
        let val = bump_value(&grid, idx, &x);
        assert!(val <= 2.0 * 2.0 - 1.0 + 1e-12, "val = {val}");
    }

    #[test]
    fn bump_shell_is_strictly_between() {
        let grid = grid124();
        let idx = 5;
        let mut x = grid.center(idx);
        // halfway through the shell of one coordinate
        let shell_mid = (1.0 - grid.delta / 2.0) * grid.b / grid.g as f64;
        x.set(0, 0, x.get(0, 0) + shell_mid);
        let val = bump_value(&grid, idx, &x);
        assert!(val < 4.0 && val > 3.0, "val = {val}");
    }

    #[test]
    fn ffn_oracle_exact_on_cores() {
        let grid = grid124();
        let table = ScalarTargetTable::tabulate(&grid, |v| TargetFn::SineOfSum.eval(v));
        let mut rng = seeding::rng_for(51, 0);
        for _ in 0..300 {
            let (idx, x) = grid.sample_in_core(&mut rng);
            let got = relu_ffn_oracle(&grid, &table, &x);
            let want = table.values[idx];
            assert!((got - want).abs() <= 1e-9, "{got} vs {want}");
        }
    }

    #[test]
    fn ffn_oracle_constant_function() {
        let grid = grid124();
        let table = ScalarTargetTable::tabulate(&grid, |_| 0.7);
        let mut rng = seeding::rng_for(52, 0);
        for _ in 0..100 {
            let (_, x) = grid.sample_in_core(&mut rng);
            assert!((relu_ffn_oracle(&grid, &table, &x) - 0.7).abs() <= 1e-9);
        }
    }

    #[test]
    fn ffn_oracle_bounded_in_dead_zone() {
        let grid = grid124();
        let table = ScalarTargetTable::tabulate(&grid, |v| TargetFn::Sum.eval(v));
        let sup = table.sup();
        let mut rng = seeding::rng_for(53, 0);
        for _ in 0..500 {
            let x = grid.domain().sample(&mut rng);
            let got = relu_ffn_oracle(&grid, &table, &x);
            assert!(got.abs() <= sup + 1e-9);
        }
    }

    #[test]
    fn grid_guard_and_indexing() {
        assert!(InputGrid::new(1.0, 10, 2, 3, 0.25).is_err()); // 10^6 centers
        let grid = grid124();
        assert_eq!(grid.center_count(), 16);
        for idx in 0..16 {
            let c = grid.center(idx);
            assert_eq!(grid.nearest_center(&c), idx);
            assert_eq!(grid.in_core(&c), Some(idx));
        }
        assert!((grid.dead_zone_fraction() - (1.0 - 0.75f64.powi(2))).abs() < 1e-12);
    }

    #[test]
    fn stage1_reproduces_bump_row() {
        let grid = grid124();
        let budgets = UapBudgets::default();
        let table = ScalarTargetTable::tabulate(&grid, |v| TargetFn::Sum.eval(v));
        let built = build_seq_to_scalar(&grid, &table, budgets).unwrap();
        let mut rng = seeding::rng_for(54, 0);
        for _ in 0..40 {
            let x = grid.domain().sample(&mut rng);
            let row = built.bump_row(&x).unwrap();
            for k in 0..grid.center_count() {
                let want = bump_value(&grid, k, &x);
                let got = row.get(0, k);
                assert!(
                    (got - want).abs() <= grid.d as f64 * budgets.epsilon0,
                    "center {k}: {got} vs {want}"
                );
            }
        }
    }

    #[test]
    fn selection_matches_bump_argmax() {
        let grid = grid124();
        let budgets = UapBudgets::default();
        let table = ScalarTargetTable::tabulate(&grid, |v| TargetFn::Sum.eval(v));
        let built = build_seq_to_scalar(&grid, &table, budgets).unwrap();
        let mut rng = seeding::rng_for(55, 0);
        for _ in 0..60 {
            let (idx, x) = grid.sample_in_core(&mut rng);
            assert_eq!(built.selected_center(&x).unwrap(), idx);
        }
    }

    #[test]
    fn scalar_two_layer_tracks_target() {
        let grid = grid124();
        let budgets = UapBudgets::default();
        let f = |x: &Matrix| TargetFn::Sum.eval(x);
        let table = ScalarTargetTable::tabulate(&grid, f);
        let built = build_seq_to_scalar(&grid, &table, budgets).unwrap();
        let report = verify_scalar_in_core(
            |x| built.forward_scalar(x),
            &grid,
            f,
            &budgets,
            built.f_sup,
            200,
            56,
        )
        .unwrap();
        assert!(report.pass, "{} > {}", report.in_core_max, report.in_core_bound);
    }

    #[test]
    fn scalar_zero_function_stays_near_zero() {
        let grid = grid124();
        let budgets = UapBudgets::default();
        let table = ScalarTargetTable::tabulate(&grid, |_| 0.0);
        let built = build_seq_to_scalar(&grid, &table, budgets).unwrap();
        let mut rng = seeding::rng_for(57, 0);
        for _ in 0..50 {
            let x = grid.domain().sample(&mut rng);
            assert!(built.forward_scalar(&x).unwrap().abs() <= 1e-9);
        }
    }

    #[test]
    fn single_layer_agrees_with_two_layer() {
        let grid = grid124();
        let budgets = UapBudgets::default();
        let f = |x: &Matrix| TargetFn::SineOfSum.eval(x);
        let table = ScalarTargetTable::tabulate(&grid, f);
        let two = build_seq_to_scalar(&grid, &table, budgets).unwrap();
        let one = build_seq_to_scalar_single_layer(&grid, &table, budgets).unwrap();
        let report = verify_scalar_in_core(
            |x| one.forward_scalar(x),
            &grid,
            f,
            &budgets,
            one.f_sup,
            200,
            58,
        )
        .unwrap();
        assert!(report.pass);
        let mut rng = seeding::rng_for(59, 0);
        let budget = 2.0 * 2.0 * budgets.in_core_bound(grid.d, one.f_sup);
        for _ in 0..100 {
            let (_, x) = grid.sample_in_core(&mut rng);
            let a = two.forward_scalar(&x).unwrap();
            let b = one.forward_scalar(&x).unwrap();
            assert!((a - b).abs() <= budget, "{a} vs {b}");
        }
    }

    #[test]
    fn single_layer_selector_sums_to_one() {
        let grid = grid124();
        let table = ScalarTargetTable::tabulate(&grid, |v| TargetFn::Sum.eval(v));
        let one = build_seq_to_scalar_single_layer(&grid, &table, UapBudgets::default()).unwrap();
        let mut rng = seeding::rng_for(60, 0);
        let x = grid.domain().sample(&mut rng);
        let sel = one.selector(&x).unwrap();
        let total: f64 = sel.data().iter().sum();
        assert!((total - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn seq2seq_swap_and_identity() {
        let grid = grid124();
        let budgets = UapBudgets::default();
        // swap: output (0,0) = X_{0,1}, output (0,1) = X_{0,0}; identity:
        // each entry is its own coordinate function
        let swap = |x: &Matrix| Matrix::from_rows(&[vec![x.get(0, 1), x.get(0, 0)]]).unwrap();
        let ident = |x: &Matrix| x.clone();
        for f in [
            &swap as &dyn Fn(&Matrix) -> Matrix,
            &ident as &dyn Fn(&Matrix) -> Matrix,
        ] {
            let tables: Vec<ScalarTargetTable> = (0..2)
                .map(|e| ScalarTargetTable::tabulate(&grid, |v| f(v).get(0, e)))
                .collect();
            let built = build_seq2seq(&grid, &tables, budgets).unwrap();
            let mut rng = seeding::rng_for(61, 0);
            let bound = budgets.in_core_bound(grid.d, built.f_sup);
            for _ in 0..100 {
                let (idx, x) = grid.sample_in_core(&mut rng);
                let out = built.forward(&x).unwrap();
                let want = f(&grid.center(idx));
                for e in 0..2 {
                    assert!(
                        (out.get(0, e) - want.get(0, e)).abs() <= bound,
                        "entry {e}: {} vs {}",
                        out.get(0, e),
                        want.get(0, e)
                    );
                }
            }
        }
    }

    #[test]
    fn seq2seq_lp_error_shrinks_with_refinement() {
        let budgets = UapBudgets {
            epsilon0: 0.05,
            epsilon1: 0.01,
        };
        let f = |x: &Matrix| {
            Matrix::from_rows(&[vec![x.get(0, 1), x.get(0, 0)]]).unwrap()
        };
        let mut last = f64::INFINITY;
        for g in [2usize, 4, 8] {
            let grid = InputGrid::new(1.0, g, 1, 2, 0.25).unwrap();
            let tables: Vec<ScalarTargetTable> = (0..2)
                .map(|e| ScalarTargetTable::tabulate(&grid, |v| f(v).get(0, e)))
                .collect();
            let built = build_seq2seq(&grid, &tables, budgets).unwrap();
            let err = lp_error_whole_box(|x| built.forward(x), &grid, f, 2.0, 400, 62);
            assert!(err < last, "g={g}: {err} !< {last}");
            last = err;
        }
    }

    #[test]
    fn table_round_trip_and_builtins() {
        let grid = grid124();
        let table = ScalarTargetTable::tabulate(&grid, |v| TargetFn::Product.eval(v));
        let text = table.to_text(&grid);
        let back = ScalarTargetTable::from_text(&text, &grid).unwrap();
        assert_eq!(table, back);
        assert_eq!(TargetFn::parse("sine-of-sum").unwrap(), TargetFn::SineOfSum);
        assert_eq!(
            TargetFn::parse("coordinate:0,1").unwrap(),
            TargetFn::Coordinate(0, 1)
        );
        assert!(TargetFn::parse("nope").is_err());
        let x = Matrix::from_rows(&[vec![0.5, -0.25]]).unwrap();
        assert_eq!(TargetFn::Coordinate(0, 1).eval(&x), -0.25);
        assert!((TargetFn::Sum.eval(&x) - 0.25).abs() < 1e-15);
    }

    #[test]
    fn builders_reject_oversized_budgets() {
        let grid = grid124();
        let table = ScalarTargetTable::tabulate(&grid, |_| 1.0);
        let bad = UapBudgets {
            epsilon0: 0.6,
            epsilon1: 0.1,
        };
        assert!(build_seq_to_scalar(&grid, &table, bad).is_err());
    }

    #[test]
    fn in_core_sampler_stays_in_core() {
        let grid = InputGrid::new(2.0, 3, 2, 2, 0.4).unwrap();
        let mut rng = seeding::rng_for(63, 0);
        for _ in 0..200 {
            let (idx, x) = grid.sample_in_core(&mut rng);
            assert_eq!(grid.in_core(&x), Some(idx));
        }
    }
}
