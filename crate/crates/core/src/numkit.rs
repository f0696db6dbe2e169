//! Dense linear algebra, numerically stable tempered softmax, norms, and a
//! seeded Monte-Carlo estimator for function-space L_p errors.
//!
//! All arithmetic is f64 with fixed summation order, so every operation is
//! deterministic bit-for-bit across runs and thread counts.

use rayon::prelude::*;

use crate::error::{Error, Result};

/// Dense real matrix in row-major order. The universal carrier for token
/// sequences, weight matrices, and score matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(rows > 0 && cols > 0, "matrix dimensions must be positive");
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 || data.len() != rows * cols {
            return Err(Error::DimensionMismatch(format!(
                "data length {} does not fill {}x{}",
                data.len(),
                rows,
                cols
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        if rows.is_empty() || rows[0].is_empty() {
            return Err(Error::DimensionMismatch("empty row set".into()));
        }
        let cols = rows[0].len();
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::DimensionMismatch("ragged rows".into()));
        }
        Ok(Matrix {
            rows: rows.len(),
            cols,
            data: rows.iter().flatten().copied().collect(),
        })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = Matrix::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                m.data[i * cols + j] = f(i, j);
            }
        }
        m
    }

    pub fn identity(n: usize) -> Self {
        Matrix::from_fn(n, n, |i, j| if i == j { 1.0 } else { 0.0 })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn col_to_vec(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }

    /// Copies `block` into self with its top-left corner at (r0, c0).
    pub fn set_block(&mut self, r0: usize, c0: usize, block: &Matrix) {
        assert!(r0 + block.rows <= self.rows && c0 + block.cols <= self.cols);
        for i in 0..block.rows {
            for j in 0..block.cols {
                self.set(r0 + i, c0 + j, block.get(i, j));
            }
        }
    }

    /// Product with fixed i-k-j loop order. Zero entries of the left factor
    /// are skipped; the skipped terms are exact +0.0 contributions, so the
    /// result is unchanged.
    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::DimensionMismatch(format!(
                "matmul {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let lhs = self.row(i);
            let dst = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for (k, &a) in lhs.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let src = &other.data[k * other.cols..(k + 1) * other.cols];
                for (d, &b) in dst.iter_mut().zip(src) {
                    *d += a * b;
                }
            }
        }
        Ok(out)
    }

    pub fn transpose(&self) -> Matrix {
        Matrix::from_fn(self.cols, self.rows, |i, j| self.get(j, i))
    }

    pub fn scale(&self, s: f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }

    pub fn add(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_with(other, |a, b| a + b, "add")
    }

    pub fn sub(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_with(other, |a, b| a - b, "sub")
    }

    pub fn hadamard(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_with(other, |a, b| a * b, "hadamard")
    }

    fn zip_with(&self, other: &Matrix, f: impl Fn(f64, f64) -> f64, op: &str) -> Result<Matrix> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::DimensionMismatch(format!(
                "{} {}x{} with {}x{}",
                op, self.rows, self.cols, other.rows, other.cols
            )));
        }
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| f(*a, *b))
                .collect(),
        })
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Which norm `norm` computes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NormKind {
    /// max_{i,j} |Z_ij|
    InfEntrywise,
    /// q-sum over columns of per-column p-norms: (sum_j (sum_i |Z_ij|^p)^{q/p})^{1/q}
    Pq { p: f64, q: f64 },
    /// entrywise p-norm over all entries, the per-sample norm of the L_p
    /// function-error estimator
    LpFunction { p: f64 },
}

pub fn norm(m: &Matrix, kind: NormKind) -> f64 {
    match kind {
        NormKind::InfEntrywise => m.max_abs(),
        NormKind::Pq { p, q } => {
            assert!(p >= 1.0 && q >= 1.0);
            let mut acc = 0.0;
            for j in 0..m.cols() {
                let colp: f64 = (0..m.rows()).map(|i| m.get(i, j).abs().powf(p)).sum();
                acc += colp.powf(q / p);
            }
            acc.powf(1.0 / q)
        }
        NormKind::LpFunction { p } => {
            assert!(p >= 1.0);
            let acc: f64 = m.data.iter().map(|v| v.abs().powf(p)).sum();
            acc.powf(1.0 / p)
        }
    }
}

/// Column-wise tempered softmax: column j of the result is
/// exp(beta * (x - max(x))) / sum, for x the j-th column of `scores`.
///
/// Subtracting the per-column maximum is exact by shift invariance and keeps
/// exp from overflowing for beta as large as 1e9.
pub fn softmax_beta(scores: &Matrix, beta: f64) -> Matrix {
    debug_assert!(beta > 0.0, "softmax_beta requires beta > 0");
    debug_assert!(scores.is_finite(), "softmax_beta requires finite scores");
    let mut out = Matrix::zeros(scores.rows(), scores.cols());
    for j in 0..scores.cols() {
        let mut max = f64::NEG_INFINITY;
        for i in 0..scores.rows() {
            max = max.max(scores.get(i, j));
        }
        let mut sum = 0.0;
        for i in 0..scores.rows() {
            let e = (beta * (scores.get(i, j) - max)).exp();
            out.set(i, j, e);
            sum += e;
        }
        for i in 0..scores.rows() {
            out.set(i, j, out.get(i, j) / sum);
        }
    }
    out
}

/// Tempered softmax of a single score vector.
pub fn softmax_vec(scores: &[f64], beta: f64) -> Vec<f64> {
    let m = Matrix::from_vec(scores.len(), 1, scores.to_vec()).expect("non-empty score vector");
    softmax_beta(&m, beta).col_to_vec(0)
}

/// Axis-aligned box [lo, hi]^{rows x cols} for Monte-Carlo sampling.
#[derive(Debug, Clone, Copy)]
pub struct BoxDomain {
    pub rows: usize,
    pub cols: usize,
    pub lo: f64,
    pub hi: f64,
}

impl BoxDomain {
    pub fn new(rows: usize, cols: usize, lo: f64, hi: f64) -> Result<Self> {
        if rows == 0 || cols == 0 || !(lo < hi) {
            return Err(Error::InvalidArgument(format!(
                "degenerate box {}x{} [{}, {}]",
                rows, cols, lo, hi
            )));
        }
        Ok(BoxDomain { rows, cols, lo, hi })
    }

    pub fn centered(rows: usize, cols: usize, half_width: f64) -> Result<Self> {
        BoxDomain::new(rows, cols, -half_width, half_width)
    }

    pub fn volume(&self) -> f64 {
        (self.hi - self.lo).powi((self.rows * self.cols) as i32)
    }

    pub fn sample(&self, rng: &mut impl rand::Rng) -> Matrix {
        let data = (0..self.rows * self.cols)
            .map(|_| rng.gen_range(self.lo..self.hi))
            .collect();
        Matrix::from_vec(self.rows, self.cols, data).expect("box dims positive")
    }
}

/// Monte-Carlo estimate of the function-space L_p distance
/// (integral over the box of ||f(X) - g(X)||_p^p dX)^{1/p}, where the inner
/// norm is entrywise.
///
/// Each sample draws its own generator from (seed, sample index), so the
/// estimate is deterministic for a given seed regardless of thread count.
pub fn mc_lp_error<F, G>(
    f: &F,
    g: &G,
    domain: &BoxDomain,
    p: f64,
    samples: usize,
    seed: u64,
) -> f64
where
    F: Fn(&Matrix) -> Matrix + Sync,
    G: Fn(&Matrix) -> Matrix + Sync,
{
    assert!(samples >= 1, "mc_lp_error requires samples >= 1");
    assert!(p >= 1.0, "mc_lp_error requires p >= 1");
    let per_sample: Vec<f64> = (0..samples)
        .into_par_iter()
        .map(|idx| {
            let mut rng = seeding::rng_for(seed, idx as u64);
            let x = domain.sample(&mut rng);
            let fv = f(&x);
            let gv = g(&x);
            assert_eq!(
                (fv.rows(), fv.cols()),
                (gv.rows(), gv.cols()),
                "f and g must agree on output shape"
            );
            fv.data
                .iter()
                .zip(&gv.data)
                .map(|(a, b)| (a - b).abs().powf(p))
                .sum::<f64>()
        })
        .collect();
    // Left-to-right reduction keeps the estimate independent of scheduling.
    let mean = per_sample.iter().sum::<f64>() / samples as f64;
    (domain.volume() * mean).powf(1.0 / p)
}

/// Seed derivation and per-index generators. One master seed plus a counter
/// gives every sample, trial, and task its own reproducible stream.
pub mod seeding {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// SplitMix64 step; the standard 64-bit mixer.
    pub fn splitmix64(state: u64) -> u64 {
        let mut z = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Folds `parts` into `master` one splitmix step at a time.
    pub fn derive(master: u64, parts: &[u64]) -> u64 {
        let mut s = splitmix64(master);
        for &p in parts {
            s = splitmix64(s ^ p);
        }
        s
    }

    pub fn rng_for(seed: u64, index: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(derive(seed, &[index]))
    }

    /// Box-Muller standard normal draw.
    pub fn standard_normal(rng: &mut impl rand::Rng) -> f64 {
        let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
        let u2: f64 = rng.gen_range(0.0..1.0);
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }
}
