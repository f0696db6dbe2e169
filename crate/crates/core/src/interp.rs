//! Truncation operator, uniform interpolation grids, nearest-anchor
//! selection, and the index map that routes anchors to output rows.

use crate::error::{Error, Result};

/// Range_{[a,b]}(x): clips x to the interval [a, b].
pub fn range_clip(x: f64, a: f64, b: f64) -> Result<f64> {
    if !(a < b) {
        return Err(Error::InvalidArgument(format!(
            "range_clip requires a < b, got [{a}, {b}]"
        )));
    }
    Ok(clip(x, a, b))
}

#[inline]
pub(crate) fn clip(x: f64, a: f64, b: f64) -> f64 {
    x.max(a).min(b)
}

/// One per-token target: Range_{[a,b]}(w^T x + t).
#[derive(Debug, Clone, PartialEq)]
pub struct TruncatedLinearModel {
    pub w: Vec<f64>,
    pub t: f64,
    pub a: f64,
    pub b: f64,
}

impl TruncatedLinearModel {
    pub fn new(w: Vec<f64>, t: f64, a: f64, b: f64) -> Result<Self> {
        if !(a < b) {
            return Err(Error::InvalidArgument(format!(
                "truncated linear model requires a < b, got [{a}, {b}]"
            )));
        }
        if w.is_empty() {
            return Err(Error::InvalidArgument("empty weight vector".into()));
        }
        Ok(TruncatedLinearModel { w, t, a, b })
    }

    /// w^T x + t before truncation.
    pub fn raw(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.w.len());
        self.w.iter().zip(x).map(|(w, x)| w * x).sum::<f64>() + self.t
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        clip(self.raw(x), self.a, self.b)
    }
}

/// Uniform anchors L_k = a + k(b-a)/p for k in 0..p, spacing (b-a)/p.
///
/// The selection range is k in {0, ..., p-1}, so the largest selectable
/// anchor is b - (b-a)/p; the gap to b is exactly the interpolation-error
/// budget. L_p = b itself exists only as the extended anchor used by
/// multi-head sentinels.
#[derive(Debug, Clone, PartialEq)]
pub struct InterpolationGrid {
    pub a: f64,
    pub b: f64,
    pub p: usize,
    pub anchors: Vec<f64>,
    pub delta_l: f64,
}

impl InterpolationGrid {
    pub fn new(a: f64, b: f64, p: usize) -> Result<Self> {
        if !(a < b) {
            return Err(Error::InvalidArgument(format!(
                "grid requires a < b, got [{a}, {b}]"
            )));
        }
        if p == 0 {
            return Err(Error::InvalidArgument("grid requires p >= 1".into()));
        }
        let delta_l = (b - a) / p as f64;
        let anchors: Vec<f64> = (0..p).map(|k| a + k as f64 * (b - a) / p as f64).collect();
        if anchors.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::InvalidArgument(
                "anchors failed to be strictly increasing (interval too small for p)".into(),
            ));
        }
        Ok(InterpolationGrid {
            a,
            b,
            p,
            anchors,
            delta_l,
        })
    }

    #[inline]
    pub fn anchor(&self, k: usize) -> f64 {
        self.anchors[k]
    }

    /// Anchor by the defining formula, valid outside 0..p as well; index -1
    /// and p are the sentinel positions of the multi-head construction.
    #[inline]
    pub fn anchor_ext(&self, k: i64) -> f64 {
        self.a + k as f64 * (self.b - self.a) / self.p as f64
    }

    /// argmin_k |value - L_k| over the selection range, ties toward the
    /// smaller index. Values outside [a, b] select an endpoint anchor.
    pub fn nearest_anchor(&self, value: f64) -> usize {
        let mut best = 0;
        let mut best_dist = (value - self.anchors[0]).abs();
        for (k, &l) in self.anchors.iter().enumerate().skip(1) {
            let d = (value - l).abs();
            if d < best_dist {
                best = k;
                best_dist = d;
            }
        }
        best
    }

    /// Whether `value` is (within `tol`) equidistant from anchors k and k+1,
    /// in which case a selector may legitimately return either.
    pub fn is_tied(&self, value: f64, k: usize, tol: f64) -> Option<usize> {
        let d0 = (value - self.anchors[k]).abs();
        for other in [k.wrapping_sub(1), k + 1] {
            if other < self.p && (d0 - (value - self.anchors[other]).abs()).abs() <= tol {
                return Some(other);
            }
        }
        None
    }
}

/// G: {0,...,p-1} -> output row index, deciding where a selected anchor
/// lands in the d_out-dimensional output column. Row indices are 0-based.
#[derive(Debug, Clone, PartialEq)]
pub struct IndexMapG {
    mode: GMode,
    pub d_out: usize,
}

#[derive(Debug, Clone, PartialEq)]
enum GMode {
    Constant(usize),
    Table(Vec<usize>),
}

impl IndexMapG {
    pub fn constant(row: usize, d_out: usize) -> Result<Self> {
        if row >= d_out {
            return Err(Error::InvalidArgument(format!(
                "G row {row} out of range for d_out {d_out}"
            )));
        }
        Ok(IndexMapG {
            mode: GMode::Constant(row),
            d_out,
        })
    }

    pub fn table(rows: Vec<usize>, d_out: usize) -> Result<Self> {
        if rows.iter().any(|&r| r >= d_out) {
            return Err(Error::InvalidArgument(format!(
                "G table entry out of range for d_out {d_out}"
            )));
        }
        if rows.is_empty() {
            return Err(Error::InvalidArgument("empty G table".into()));
        }
        Ok(IndexMapG {
            mode: GMode::Table(rows),
            d_out,
        })
    }

    pub fn map(&self, k: usize) -> usize {
        match &self.mode {
            GMode::Constant(r) => *r,
            GMode::Table(rows) => rows[k.min(rows.len() - 1)],
        }
    }

    pub fn is_constant(&self) -> bool {
        matches!(self.mode, GMode::Constant(_))
    }

    pub fn len_hint(&self) -> Option<usize> {
        match &self.mode {
            GMode::Constant(_) => None,
            GMode::Table(rows) => Some(rows.len()),
        }
    }
}

/// Checks that the score-form objective argmin_k (-2*value + L_0 + L_k) * k
/// selects the same anchor as the direct nearest-anchor argmin, up to the
/// tie rule. The two objectives are algebraically equal after multiplying by
/// the positive constant delta_L and shifting by a k-independent term.
pub fn score_form_equivalence_check(grid: &InterpolationGrid, value: f64) -> bool {
    assert!(value.is_finite());
    let mut best = 0;
    let mut best_score = f64::INFINITY;
    for k in 0..grid.p {
        let s = (-2.0 * value + grid.anchor(0) + grid.anchor(k)) * k as f64;
        if s < best_score {
            best = k;
            best_score = s;
        }
    }
    let near = grid.nearest_anchor(value);
    if best == near {
        return true;
    }
    // Accept a tied neighbor: floating point may resolve an exact midpoint
    // differently between the two algebraic routes.
    let tol = 1e-9 * (1.0 + value.abs() + grid.b.abs() + grid.a.abs());
    ((value - grid.anchor(best)).abs() - (value - grid.anchor(near)).abs()).abs() <= tol
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkit::seeding;
    use rand::Rng;

    #[test]
    fn range_clip_cases() {
        assert_eq!(range_clip(0.5, 0.0, 1.0).unwrap(), 0.5);
        assert_eq!(range_clip(-2.0, 0.0, 1.0).unwrap(), 0.0);
        assert_eq!(range_clip(3.0, 0.0, 1.0).unwrap(), 1.0);
        assert!(range_clip(0.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn range_clip_idempotent_and_lipschitz() {
        let mut rng = seeding::rng_for(3, 0);
        for _ in 0..500 {
            let x: f64 = rng.gen_range(-10.0..10.0);
            let y: f64 = rng.gen_range(-10.0..10.0);
            let cx = clip(x, -1.0, 2.0);
            assert_eq!(clip(cx, -1.0, 2.0), cx);
            assert!((cx - clip(y, -1.0, 2.0)).abs() <= (x - y).abs() + 1e-15);
        }
    }

    #[test]
    fn grid_layout() {
        let g = InterpolationGrid::new(0.0, 1.0, 10).unwrap();
        assert_eq!(g.anchors.len(), 10);
        assert_eq!(g.anchor(0), 0.0);
        assert!((g.anchor(9) - 0.9).abs() < 1e-15);
        assert!((g.delta_l - 0.1).abs() < 1e-15);
        assert_eq!(g.anchor_ext(10), 1.0);
        assert!((g.anchor_ext(-1) + 0.1).abs() < 1e-15);
    }

    #[test]
    fn nearest_anchor_cases() {
        let g = InterpolationGrid::new(0.0, 1.0, 10).unwrap();
        assert_eq!(g.nearest_anchor(0.5), 5);
        assert_eq!(g.nearest_anchor(0.0), 0);
        assert_eq!(g.nearest_anchor(8.0), 9);
        // exact midpoint ties toward the smaller index
        assert_eq!(g.nearest_anchor(0.35), 3);
    }

    #[test]
    fn nearest_anchor_within_half_spacing() {
        let g = InterpolationGrid::new(-2.0, 3.0, 17).unwrap();
        let mut rng = seeding::rng_for(11, 0);
        for _ in 0..2000 {
            let v: f64 = rng.gen_range(-2.0..3.0);
            let k = g.nearest_anchor(v);
            // interior values sit within half a spacing of their anchor; the
            // top cell [L_{p-1}, b] reaches a full spacing
            assert!((v - g.anchor(k)).abs() <= g.delta_l + 1e-12);
            if v <= g.anchor(g.p - 1) {
                assert!((v - g.anchor(k)).abs() <= g.delta_l / 2.0 + 1e-12);
            }
        }
    }

    #[test]
    fn score_form_matches_nearest_anchor() {
        let mut rng = seeding::rng_for(19, 0);
        for trial in 0..1000 {
            let a: f64 = rng.gen_range(-3.0..2.0);
            let b = a + rng.gen_range(0.1..4.0);
            let p = rng.gen_range(2..40);
            let g = InterpolationGrid::new(a, b, p).unwrap();
            let v: f64 = rng.gen_range(a - 1.0..b + 1.0);
            assert!(
                score_form_equivalence_check(&g, v),
                "trial {trial}: grid [{a},{b}] p={p} value {v}"
            );
        }
    }

    #[test]
    fn score_form_tie_and_degenerate() {
        let g = InterpolationGrid::new(0.0, 1.0, 10).unwrap();
        let midpoint = 0.5 * (g.anchor(3) + g.anchor(4));
        assert!(score_form_equivalence_check(&g, midpoint));
        let g2 = InterpolationGrid::new(0.0, 1.0, 2).unwrap();
        assert!(score_form_equivalence_check(&g2, 0.3));
    }

    #[test]
    fn score_form_fine_mesh_sweep() {
        for p in [2usize, 3, 5, 8, 13, 21, 34, 64] {
            let g = InterpolationGrid::new(-1.0, 1.5, p).unwrap();
            let lo = g.a - 1.0;
            let hi = g.b + 1.0;
            for i in 0..=4000 {
                let v = lo + (hi - lo) * i as f64 / 4000.0;
                assert!(score_form_equivalence_check(&g, v), "p={p} v={v}");
            }
        }
    }

    #[test]
    fn index_map_bounds() {
        assert!(IndexMapG::constant(3, 3).is_err());
        let g = IndexMapG::table(vec![0, 2, 1], 3).unwrap();
        assert_eq!(g.map(1), 2);
        assert!(!g.is_constant());
        assert!(IndexMapG::constant(0, 1).unwrap().is_constant());
    }
}
