//! Attention as an exact column-wise linear map, and the three-layer
//! sequence-to-sequence assembly built from it.
//!
//! The column-wise head stores log-space keys: with strictly positive mixing
//! matrix B, exp recovers B entrywise and the softmax denominator is forced
//! to the constant 3M by a complementary key on the padding token, so the
//! first n output columns equal A X B exactly. A routing scalar T in the
//! padding query concentrates that column's mass on the zero-valued padding
//! token.
//!
//! The three-layer network realizes a one-output-row ReLU net
//! sum_k a_{i,k} ReLU(sum_j w_{i,k,j}^T x_j): layer 1 produces every
//! per-token pre-activation piece, layer 2 mixes them across tokens into
//! diagonal blocks, layer 3 applies the signed ReLU via paired heads whose
//! softmax selects either the diagonal score or the padding token.

use crate::attn::{AffineMap, AttentionHead, AttentionStack};
use crate::construct_multi::{multi_head_parts, MultiHeadPlan};
use crate::error::{Error, Result};
use crate::hardmax::beta_for_unique_max;
use crate::interp::TruncatedLinearModel;
use crate::numkit::Matrix;

/// Column-wise linear map spec: ell(X) = a_lin X b_mix with strictly
/// positive b_mix. `t_route` is the padding-query routing scalar.
#[derive(Debug, Clone)]
pub struct ColwiseSpec {
    pub a_lin: Matrix,
    pub b_mix: Matrix,
    pub t_route: f64,
}

impl ColwiseSpec {
    /// Sizes T so the padding column's output stays below `eps_pad` for
    /// inputs with ||a_lin X||_inf <= ax_bound.
    pub fn new(a_lin: Matrix, b_mix: Matrix, eps_pad: f64, ax_bound: f64) -> Result<Self> {
        let n = b_mix.rows();
        if b_mix.cols() != n {
            return Err(Error::DimensionMismatch("b_mix must be square".into()));
        }
        if b_mix.data().iter().any(|&v| !(v > 0.0)) {
            return Err(Error::InvalidArgument(
                "b_mix entries must be strictly positive; split a general B into B+ - B-".into(),
            ));
        }
        if !(eps_pad > 0.0 && ax_bound > 0.0) {
            return Err(Error::InvalidArgument(
                "eps_pad and ax_bound must be positive".into(),
            ));
        }
        let m = col_sum_max(&b_mix);
        // padding mass per real token is at most exp(-T n ln 2)
        let t_route =
            ((3.0 * m * n as f64 * ax_bound / eps_pad).ln() / (n as f64 * std::f64::consts::LN_2))
                .max(1.0);
        Ok(ColwiseSpec {
            a_lin,
            b_mix,
            t_route,
        })
    }
}

fn col_sum_max(b: &Matrix) -> f64 {
    let mut m = 0.0f64;
    for j in 0..b.cols() {
        let s: f64 = (0..b.rows()).map(|i| b.get(i, j)).sum();
        m = m.max(s);
    }
    m
}

/// Z = [[X, 0], [I_n, 0], [0, 1]]: the augmented carrier the column-wise
/// head runs on.
pub fn augment_colwise_input(x: &Matrix) -> Matrix {
    let (d, n) = (x.rows(), x.cols());
    let mut z = Matrix::zeros(d + n + 1, n + 1);
    z.set_block(0, 0, x);
    for i in 0..n {
        z.set(d + i, i, 1.0);
    }
    z.set(d + n, n, 1.0);
    z
}

/// The head realizing ell(X) = a_lin X b_mix on the first n columns of the
/// augmented input, exactly.
pub fn build_colwise(spec: &ColwiseSpec) -> Result<AttentionHead> {
    let d_out = spec.a_lin.rows();
    let d = spec.a_lin.cols();
    let n = spec.b_mix.rows();
    let m = col_sum_max(&spec.b_mix);
    let total = d + n + 1;

    let mut w_v = Matrix::zeros(d_out, total);
    for i in 0..d_out {
        for j in 0..d {
            w_v.set(i, j, 3.0 * m * spec.a_lin.get(i, j));
        }
    }
    let mut w_k = Matrix::zeros(n, total);
    for r in 0..n {
        for i in 0..n {
            w_k.set(r, d + i, spec.b_mix.get(i, r).ln());
        }
        let s_r: f64 = (0..n).map(|i| spec.b_mix.get(i, r)).sum();
        w_k.set(r, d + n, (3.0 * m - s_r).ln());
    }
    let mut w_q = Matrix::zeros(n, total);
    for r in 0..n {
        w_q.set(r, d + r, 1.0);
        w_q.set(r, d + n, spec.t_route);
    }
    Ok(AttentionHead::new(
        w_q,
        w_k,
        w_v,
        Matrix::identity(n + 1),
        1.0,
    ))
}

/// General B via the positive split B- = max(0, -B) + 0.1, B+ = B + B-:
/// two heads whose difference reproduces a_lin X B.
pub fn build_colwise_general(
    a_lin: &Matrix,
    b: &Matrix,
    eps_pad: f64,
    ax_bound: f64,
) -> Result<Vec<AttentionHead>> {
    let b_neg = Matrix::from_fn(b.rows(), b.cols(), |i, j| (-b.get(i, j)).max(0.0) + 0.1);
    let b_pos = b.add(&b_neg)?;
    let pos = build_colwise(&ColwiseSpec::new(
        a_lin.clone(),
        b_pos,
        eps_pad / 2.0,
        ax_bound,
    )?)?;
    let mut neg = build_colwise(&ColwiseSpec::new(
        a_lin.clone(),
        b_neg,
        eps_pad / 2.0,
        ax_bound,
    )?)?;
    neg.w_v = neg.w_v.scale(-1.0);
    Ok(vec![pos, neg])
}

/// One hidden unit of the per-column ReLU net: sign in {-1, +1} and one
/// weight vector per input token.
#[derive(Debug, Clone)]
pub struct FfnUnit {
    pub sign: f64,
    /// w[j] in R^d weights input token j.
    pub w: Vec<Vec<f64>>,
}

/// A one-output-row ReLU net over sequences: output column i is
/// sum_k units[i][k].sign * ReLU(sum_j w[j]^T x_j).
#[derive(Debug, Clone)]
pub struct ThreeLayerFfn {
    pub d: usize,
    pub n: usize,
    /// units[i] lists output column i's hidden units; all columns must hold
    /// the same count (pad with zero-weight units).
    pub units: Vec<Vec<FfnUnit>>,
}

impl ThreeLayerFfn {
    pub fn unit_count(&self) -> Result<usize> {
        let counts: Vec<usize> = self.units.iter().map(|u| u.len()).collect();
        if self.units.len() != self.n {
            return Err(Error::InvalidArgument("need one unit list per column".into()));
        }
        let n0 = counts.first().copied().unwrap_or(0);
        if n0 == 0 || counts.iter().any(|&c| c != n0) {
            return Err(Error::InvalidArgument(
                "all columns need the same positive unit count".into(),
            ));
        }
        Ok(n0)
    }

    pub fn pre_activation(&self, i: usize, k: usize, x: &Matrix) -> f64 {
        let unit = &self.units[i][k];
        let mut acc = 0.0;
        for (j, wj) in unit.w.iter().enumerate() {
            for (r, w) in wj.iter().enumerate() {
                acc += w * x.get(r, j);
            }
        }
        acc
    }

    /// Direct evaluation; the oracle the attention assembly is graded
    /// against.
    pub fn eval(&self, x: &Matrix) -> Matrix {
        let nk = self.units[0].len();
        Matrix::from_fn(1, self.n, |_, i| {
            (0..nk)
                .map(|k| {
                    self.units[i][k].sign * self.pre_activation(i, k, x).max(0.0)
                })
                .sum()
        })
    }

    fn max_w1(&self) -> f64 {
        self.units
            .iter()
            .flatten()
            .flat_map(|u| u.w.iter())
            .map(|wj| wj.iter().map(|w| w.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }
}

/// Knobs of the three-layer assembly.
#[derive(Debug, Clone, Copy)]
pub struct ThreeLayerBudget {
    /// Declared input box half-width.
    pub x_bound: f64,
    /// Layer-1 interpolation budget per pre-activation entry.
    pub eps_pre: f64,
    /// Padding-column mass budget of the layer-2 mixing heads.
    pub eps_route: f64,
    /// Softmax deviation share of the selector softmaxes.
    pub eps_sel: f64,
    /// Assumed floor on |pre-activation| for sizing the layer-3 selector;
    /// smaller magnitudes degrade gracefully (the output error is bounded
    /// by the magnitude itself).
    pub s_floor: f64,
}

impl Default for ThreeLayerBudget {
    fn default() -> Self {
        ThreeLayerBudget {
            x_bound: 1.0,
            eps_pre: 0.02,
            eps_route: 1e-6,
            eps_sel: 1e-4,
            s_floor: 0.05,
        }
    }
}

/// Existence thresholds in the case analysis are turned into formulas with
/// this shared safety factor.
pub const BETA_SAFETY_FACTOR: f64 = 4.0;

/// Maximum total hidden units (N * n) a build accepts.
pub const MAX_HIDDEN_UNITS: usize = 512;

/// The assembled network: prep pads the input, three stacks run in
/// sequence, the readout drops the padding column.
#[derive(Debug, Clone)]
pub struct ThreeLayerNet {
    pub prep: AffineMap,
    pub layer1: AttentionStack,
    pub layer2: AttentionStack,
    pub layer3: AttentionStack,
    pub readout_right: Matrix,
}

impl ThreeLayerNet {
    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        let z = self.prep.apply(x)?;
        let z1 = self.layer1.forward(&z)?;
        let z2 = self.layer2.forward(&z1)?;
        let z3 = self.layer3.forward(&z2)?;
        z3.matmul(&self.readout_right)
    }

    /// Stage outputs for diagnostics: (prep, layer1, layer2, layer3).
    pub fn stages(&self, x: &Matrix) -> Result<[Matrix; 4]> {
        let z = self.prep.apply(x)?;
        let z1 = self.layer1.forward(&z)?;
        let z2 = self.layer2.forward(&z1)?;
        let z3 = self.layer3.forward(&z2)?;
        Ok([z, z1, z2, z3])
    }
}

fn identity_keeper_head(top_rows: usize, d_in: usize, n1: usize, beta: f64) -> AttentionHead {
    // keeps the bottom identity block: K = Q = bottom rows, scores identity
    let total_out = top_rows + n1;
    let mut w_v = Matrix::zeros(total_out, d_in);
    let mut w_kq = Matrix::zeros(n1, d_in);
    for r in 0..n1 {
        w_v.set(top_rows + r, d_in - n1 + r, 1.0);
        w_kq.set(r, d_in - n1 + r, 1.0);
    }
    AttentionHead::new(w_kq.clone(), w_kq, w_v, Matrix::identity(n1), beta)
}

pub fn build_three_layer_seq2seq(
    ffn: &ThreeLayerFfn,
    budget: &ThreeLayerBudget,
) -> Result<ThreeLayerNet> {
    let nk = ffn.unit_count()?;
    let (d, n) = (ffn.d, ffn.n);
    if n < 2 {
        return Err(Error::InvalidArgument("need n >= 2 tokens".into()));
    }
    if nk * n > MAX_HIDDEN_UNITS {
        return Err(Error::GuardExceeded(format!(
            "N n = {} exceeds {MAX_HIDDEN_UNITS} hidden units",
            nk * n
        )));
    }
    for col in &ffn.units {
        for u in col {
            if u.w.len() != n || u.w.iter().any(|wj| wj.len() != d) {
                return Err(Error::DimensionMismatch(
                    "every unit needs one d-vector per token".into(),
                ));
            }
            if u.sign != 1.0 && u.sign != -1.0 {
                return Err(Error::InvalidArgument("unit signs must be +-1".into()));
            }
        }
    }

    let n1 = n + 1; // tokens after padding
    let top = n * nk;
    let carrier = top + n1; // rows of the inter-layer carrier

    // prep: X -> [[X, 0], [I_n, 0], [0, 1]]
    let mut left = Matrix::zeros(d + n1, d);
    for r in 0..d {
        left.set(r, r, 1.0);
    }
    let mut right = Matrix::zeros(n, n1);
    for j in 0..n {
        right.set(j, j, 1.0);
    }
    let mut bias = Matrix::zeros(d + n1, n1);
    for j in 0..n {
        bias.set(d + j, j, 1.0);
    }
    bias.set(d + n, n, 1.0);
    let prep = AffineMap::new(left, bias).with_right(right);

    // layer 1: per (column, unit) one truncated-linear group writing row
    // i * nk + k; plus the identity keeper
    let r_tok = (ffn.max_w1() * budget.x_bound).max(0.1);
    let beta_keep =
        BETA_SAFETY_FACTOR * beta_for_unique_max(n1.max(2), 1.0, budget.eps_sel)?;
    let mut heads1 = Vec::new();
    let per_head = n1 - 2;
    let groups = ((2.0 * 1.05 * r_tok / budget.eps_pre).ceil() as usize / per_head + 1).max(1);
    for i in 0..n {
        for k in 0..nk {
            let range = 1.05 * r_tok;
            let mut task: Vec<TruncatedLinearModel> = ffn.units[i][k]
                .w
                .iter()
                .map(|wj| TruncatedLinearModel::new(wj.clone(), 0.0, -range, range))
                .collect::<Result<_>>()?;
            // padding token contributes zero
            task.push(TruncatedLinearModel::new(
                vec![0.0; d],
                0.0,
                -range,
                range,
            )?);
            let plan = MultiHeadPlan::new(task, groups, i * nk + k, carrier, budget.eps_sel)?
                .with_x_bound(budget.x_bound);
            let (mut pre, group_heads) = multi_head_parts(&plan)?;
            // the group reads the token block of the padded carrier
            let mut extract = Matrix::zeros(d, d + n1);
            for r in 0..d {
                extract.set(r, r, 1.0);
            }
            pre.compose_inner_left(&extract)?;
            for mut h in group_heads {
                h.pre = Some(pre.clone());
                heads1.push(h);
            }
        }
    }
    heads1.push(identity_keeper_head(top, d + n1, n1, beta_keep));
    let layer1 = AttentionStack::new(heads1);

    // layer 2: per output column two mixing heads (positive split) plus the
    // identity keeper
    let s_bound = (n as f64 * r_tok).max(0.1) * 1.1;
    let mut heads2 = Vec::new();
    for i in 0..n {
        // selector: rows of column i's unit block, then the bottom identity
        let mut sel = Matrix::zeros(nk + n1, carrier);
        for k in 0..nk {
            sel.set(k, i * nk + k, 1.0);
        }
        for r in 0..n1 {
            sel.set(nk + r, top + r, 1.0);
        }
        // reorganizer: unit k of column i lands on carrier row k * n + i
        let mut a_reorg = Matrix::zeros(carrier, nk);
        for k in 0..nk {
            a_reorg.set(k * n + i, k, 1.0);
        }
        // mixing: sum the real tokens into column i
        let mut b = Matrix::zeros(n, n);
        for r in 0..n {
            b.set(r, i, 1.0);
        }
        for mut head in build_colwise_general(&a_reorg, &b, budget.eps_route, s_bound)? {
            head.w_q = head.w_q.matmul(&sel)?;
            head.w_k = head.w_k.matmul(&sel)?;
            head.w_v = head.w_v.matmul(&sel)?;
            heads2.push(head);
        }
    }
    heads2.push(identity_keeper_head(top, carrier, n1, beta_keep));
    let layer2 = AttentionStack::new(heads2);

    // layer 3: per unit a signed pair of selector heads
    let beta3 = BETA_SAFETY_FACTOR
        * beta_for_unique_max(n1.max(2), budget.s_floor.min(1.0), budget.eps_sel)?;
    let mut w_kq_base = Matrix::zeros(n, carrier);
    for r in 0..n {
        w_kq_base.set(r, top + r, 1.0);
    }
    let mut heads3 = Vec::new();
    for k in 0..nk {
        for sign in [1.0, -1.0] {
            let mut w_v = Matrix::zeros(1, carrier);
            for i in 0..n {
                w_v.set(0, k * n + i, sign);
            }
            // query: matched diagonal keeps its score, mismatched scores -1,
            // padding token scores 0
            let mut w_q = Matrix::zeros(n, carrier);
            for i in 0..n {
                let matched = ffn.units[i][k].sign == sign;
                if matched {
                    w_q.set(i, k * n + i, 1.0);
                    w_q.set(i, top + i, 0.0);
                } else {
                    w_q.set(i, top + i, -1.0);
                }
                // baseline -1 against every other real token
                for r in 0..n {
                    if r != i {
                        w_q.set(i, top + r, -1.0);
                    }
                }
            }
            heads3.push(AttentionHead::new(
                w_q,
                w_kq_base.clone(),
                w_v,
                Matrix::identity(n1),
                beta3,
            ));
        }
    }
    let layer3 = AttentionStack::new(heads3);

    let mut readout_right = Matrix::zeros(n1, n);
    for j in 0..n {
        readout_right.set(j, j, 1.0);
    }
    Ok(ThreeLayerNet {
        prep,
        layer1,
        layer2,
        layer3,
        readout_right,
    })
}

/// Independent row builds concatenated: nothing is shared across rows.
pub fn build_three_layer_rows(
    rows: &[ThreeLayerFfn],
    budget: &ThreeLayerBudget,
) -> Result<Vec<ThreeLayerNet>> {
    rows.iter()
        .map(|f| build_three_layer_seq2seq(f, budget))
        .collect()
}

pub fn forward_three_layer_rows(nets: &[ThreeLayerNet], x: &Matrix) -> Result<Matrix> {
    let mut rows = Vec::with_capacity(nets.len());
    for net in nets {
        let out = net.forward(x)?;
        rows.push(out.row(0).to_vec());
    }
    Matrix::from_rows(&rows)
}
