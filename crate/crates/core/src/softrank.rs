//! Hard and differentiable ascending ranks.
//!
//! The soft rank of `s` is the Euclidean projection of `s / ε` onto the
//! permutahedron spanned by `(1, 2, …, n)`. Larger scores receive larger ranks.
//! The projection reduces to an isotonic regression in sorted order, solved by
//! pool-adjacent-violators in `O(n log n)` overall.
//!
//! Inside one pooled block of the isotonic solution the ranks move rigidly with
//! the centred scores, so the Jacobian is `(1/ε)·(I − A)` where `A` averages
//! over each block. Singleton blocks therefore contribute zero derivative: in
//! the hard-rank limit the map is locally constant.

use std::cmp::Ordering;
use std::ops::Range;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SoftRankConfig {
    epsilon: f64,
}

impl SoftRankConfig {
    /// `epsilon` must be positive; `f64::INFINITY` is accepted and pools every score.
    pub fn new(epsilon: f64) -> Result<Self> {
        if epsilon.is_nan() || epsilon <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "soft-rank epsilon must be positive, got {epsilon}"
            )));
        }
        Ok(Self { epsilon })
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }
}

impl Default for SoftRankConfig {
    fn default() -> Self {
        Self { epsilon: 0.05 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SoftRankResult {
    /// Soft ascending ranks, indexed like the input scores.
    pub ranks: Vec<f64>,
    /// Contiguous pooled groups, as ranges of positions in `order`.
    pub blocks: Vec<Range<usize>>,
    /// Input indices sorted by descending score (ties: larger index first).
    pub order: Vec<usize>,
    epsilon: f64,
}

impl SoftRankResult {
    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    /// `upstreamᵀ · ∂ranks/∂scores`, in `O(n)`.
    pub fn vjp(&self, upstream: &[f64]) -> Result<Vec<f64>> {
        if upstream.len() != self.ranks.len() {
            return Err(Error::Shape(format!(
                "upstream has {} entries, ranks have {}",
                upstream.len(),
                self.ranks.len()
            )));
        }
        let inv_eps = 1.0 / self.epsilon;
        let mut out = vec![0.0; upstream.len()];
        for block in &self.blocks {
            let members = &self.order[block.clone()];
            let mean = members.iter().map(|&i| upstream[i]).sum::<f64>() / members.len() as f64;
            for &i in members {
                out[i] = (upstream[i] - mean) * inv_eps;
            }
        }
        Ok(out)
    }
}

fn check_scores(scores: &[f64]) -> Result<()> {
    if let Some(i) = scores.iter().position(|s| s.is_nan()) {
        return Err(Error::InvalidArgument(format!("score {i} is NaN")));
    }
    Ok(())
}

/// Indices sorted by ascending score, ties by ascending index.
fn ascending_order(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| {
        scores[a]
            .partial_cmp(&scores[b])
            .unwrap_or(Ordering::Equal)
            .then(a.cmp(&b))
    });
    idx
}

/// Ascending integer ranks in `1..=n`; tied scores are ranked by index, so the
/// result is always a permutation.
pub fn hard_rank_ascending(scores: &[f64]) -> Result<Vec<usize>> {
    check_scores(scores)?;
    let mut ranks = vec![0; scores.len()];
    for (pos, i) in ascending_order(scores).into_iter().enumerate() {
        ranks[i] = pos + 1;
    }
    Ok(ranks)
}

/// Pool-adjacent-violators for a non-increasing fit of `y` under squared loss.
///
/// Returns the fitted values and the pooled blocks.
pub fn isotonic_nonincreasing(y: &[f64]) -> (Vec<f64>, Vec<Range<usize>>) {
    // (sum, start, end)
    let mut stack: Vec<(f64, usize, usize)> = Vec::with_capacity(y.len());
    for (i, &v) in y.iter().enumerate() {
        let mut cur = (v, i, i + 1);
        while let Some(&(sum, start, end)) = stack.last() {
            let prev_mean = sum / (end - start) as f64;
            let cur_mean = cur.0 / (cur.2 - cur.1) as f64;
            if prev_mean > cur_mean {
                break;
            }
            stack.pop();
            cur = (sum + cur.0, start, cur.2);
        }
        stack.push(cur);
    }
    let mut fit = vec![0.0; y.len()];
    let mut blocks = Vec::with_capacity(stack.len());
    for (sum, start, end) in stack {
        let mean = sum / (end - start) as f64;
        fit[start..end].iter_mut().for_each(|v| *v = mean);
        blocks.push(start..end);
    }
    (fit, blocks)
}

pub fn soft_rank_ascending(scores: &[f64], cfg: &SoftRankConfig) -> Result<SoftRankResult> {
    check_scores(scores)?;
    if let Some(i) = scores.iter().position(|s| s.is_infinite()) {
        return Err(Error::InvalidArgument(format!("score {i} is infinite")));
    }
    let n = scores.len();
    if n == 0 {
        return Err(Error::InvalidArgument("soft rank of an empty vector".into()));
    }
    let eps = cfg.epsilon;
    let mut order = ascending_order(scores);
    order.reverse();

    // Sorted descending: z_j = s_(j)/ε against target w_j = n - j.
    let z: Vec<f64> = order.iter().map(|&i| scores[i] / eps).collect();
    let w: Vec<f64> = (0..n).map(|j| (n - j) as f64).collect();
    let y: Vec<f64> = z.iter().zip(&w).map(|(a, b)| a - b).collect();
    let (_, blocks) = isotonic_nonincreasing(&y);

    let mut ranks = vec![0.0; n];
    for block in &blocks {
        let len = block.len() as f64;
        let z_mean = z[block.clone()].iter().sum::<f64>() / len;
        let w_mean = w[block.clone()].iter().sum::<f64>() / len;
        for j in block.clone() {
            ranks[order[j]] = if block.len() == 1 {
                w[j]
            } else {
                (z[j] - z_mean) + w_mean
            };
        }
    }
    Ok(SoftRankResult {
        ranks,
        blocks,
        order,
        epsilon: eps,
    })
}

pub fn soft_rank_vjp(scores: &[f64], cfg: &SoftRankConfig, upstream: &[f64]) -> Result<Vec<f64>> {
    if upstream.len() != scores.len() {
        return Err(Error::Shape(format!(
            "upstream has {} entries, scores have {}",
            upstream.len(),
            scores.len()
        )));
    }
    soft_rank_ascending(scores, cfg)?.vjp(upstream)
}

/// Soft ranks divided by `n + 1`, strictly inside `(0, 1)`.
pub fn normalized_soft_rank(scores: &[f64], cfg: &SoftRankConfig, n_total: usize) -> Result<Vec<f64>> {
    if n_total != scores.len() {
        return Err(Error::Shape(format!(
            "n_total = {n_total} but {} scores given",
            scores.len()
        )));
    }
    let denom = (n_total + 1) as f64;
    Ok(soft_rank_ascending(scores, cfg)?
        .ranks
        .into_iter()
        .map(|r| r / denom)
        .collect())
}
