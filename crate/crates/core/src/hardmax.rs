//! Temperature budgets under which tempered softmax acts as a near-argmax
//! selector, and checkers that measure the realized deviation.
//!
//! Two regimes: a unique largest score (deviation measured against the
//! one-hot vector of the argmax), and two leading scores tied or separated
//! by a small gap delta (deviation measured against the logistic blend of
//! the top two one-hots, with the third score trailing by at least gamma).

use crate::error::{Error, Result};
use crate::numkit::softmax_vec;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BudgetCase {
    UniqueMax,
    TwoMax,
}

/// A computed temperature budget together with the inputs that produced it.
#[derive(Debug, Clone, Copy)]
pub struct BetaBudget {
    pub case: BudgetCase,
    pub epsilon: f64,
    pub n: usize,
    /// x1 - x2 for UniqueMax; the top-vs-third gap gamma for TwoMax.
    pub gap: f64,
    pub beta_min: f64,
}

impl BetaBudget {
    pub fn unique_max(n: usize, gap: f64, epsilon: f64) -> Result<Self> {
        Ok(BetaBudget {
            case: BudgetCase::UniqueMax,
            epsilon,
            n,
            gap,
            beta_min: beta_for_unique_max(n, gap, epsilon)?,
        })
    }

    pub fn two_max(n: usize, gamma: f64, epsilon: f64) -> Result<Self> {
        Ok(BetaBudget {
            case: BudgetCase::TwoMax,
            epsilon,
            n,
            gap: gamma,
            beta_min: beta_for_two_max(n, gamma, epsilon)?,
        })
    }
}

/// (ln(n-1) - ln eps) / gap: past this temperature the softmax of any
/// n-vector whose top entry leads by `gap` is within eps of the one-hot.
pub fn beta_for_unique_max(n: usize, gap: f64, epsilon: f64) -> Result<f64> {
    if n < 2 {
        return Err(Error::InvalidArgument(format!(
            "unique-max budget needs n >= 2, got {n}"
        )));
    }
    if !(gap > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "unique-max budget needs a positive gap, got {gap}; tied input must use the two-max case"
        )));
    }
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "epsilon must lie in (0,1), got {epsilon}"
        )));
    }
    Ok((((n - 1) as f64).ln() - epsilon.ln()) / gap)
}

/// (ln(n-2) - ln eps) / gamma: past this temperature the softmax is within
/// eps of the two-entry logistic blend whenever the third-largest entry
/// trails the largest by gamma. In the grid setting gamma = (delta_L)^2 / 2.
pub fn beta_for_two_max(n: usize, gamma: f64, epsilon: f64) -> Result<f64> {
    if n < 3 {
        return Err(Error::InvalidArgument(format!(
            "two-max budget needs n >= 3, got {n}"
        )));
    }
    if !(gamma > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "two-max budget needs gamma > 0, got {gamma}"
        )));
    }
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "epsilon must lie in (0,1), got {epsilon}"
        )));
    }
    Ok((((n - 2) as f64).ln() - epsilon.ln()) / gamma)
}

/// Indices of the two largest entries, largest first, ties by position.
fn top_two(scores: &[f64]) -> (usize, usize) {
    assert!(scores.len() >= 2);
    let (mut i1, mut i2) = if scores[0] >= scores[1] { (0, 1) } else { (1, 0) };
    for (i, &v) in scores.iter().enumerate().skip(2) {
        if v > scores[i1] {
            i2 = i1;
            i1 = i;
        } else if v > scores[i2] {
            i2 = i;
        }
    }
    (i1, i2)
}

/// The logistic blend weights (on the max and the runner-up) that softmax
/// converges to when the rest of the entries vanish. Past beta*delta ~ 700
/// the runner-up weight underflows; the clamp to the one-hot limit is exact
/// to f64 and monotone.
pub fn blend_weights(delta: f64, beta: f64) -> (f64, f64) {
    debug_assert!(delta >= 0.0 && beta > 0.0);
    let bd = beta * delta;
    if bd > 700.0 {
        return (1.0, 0.0);
    }
    let e = (-bd).exp();
    (1.0 / (1.0 + e), e / (1.0 + e))
}

/// ||softmax_beta(x) - e_argmax||_inf.
pub fn deviation_from_onehot(scores: &[f64], beta: f64) -> f64 {
    let s = softmax_vec(scores, beta);
    let (i1, _) = top_two(scores);
    s.iter()
        .enumerate()
        .map(|(i, &v)| if i == i1 { (1.0 - v).abs() } else { v })
        .fold(0.0, f64::max)
}

/// ||softmax_beta(x) - blend||_inf with the blend built from the realized
/// delta = x1 - x2 of the given input.
pub fn deviation_from_blend(scores: &[f64], beta: f64) -> f64 {
    let s = softmax_vec(scores, beta);
    let (i1, i2) = top_two(scores);
    let delta = scores[i1] - scores[i2];
    let (w1, w2) = blend_weights(delta, beta);
    s.iter()
        .enumerate()
        .map(|(i, &v)| {
            let target = if i == i1 {
                w1
            } else if i == i2 {
                w2
            } else {
                0.0
            };
            (v - target).abs()
        })
        .fold(0.0, f64::max)
}

/// Dispatching checker: exactly tied leaders are graded against the blend,
/// a unique leader against its one-hot.
pub fn hardmax_deviation(scores: &[f64], beta: f64) -> f64 {
    let (i1, i2) = top_two(scores);
    if scores[i1] == scores[i2] {
        deviation_from_blend(scores, beta)
    } else {
        deviation_from_onehot(scores, beta)
    }
}

/// Realized top-vs-third gap of a score vector (the empirical gamma), or
/// None when the vector has fewer than three entries.
pub fn measured_gamma(scores: &[f64]) -> Option<f64> {
    if scores.len() < 3 {
        return None;
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
    Some(sorted[0] - sorted[2])
}
