//! Selective-classification and calibration metrics on finite samples.

use std::fmt;
use std::str::FromStr;

use crate::batch::{argmax, check_batch, LabelBatch, ProbBatch};
use crate::error::{Error, Result};
use crate::losses::aurc_weight;
use crate::softrank::hard_rank_ascending;

/// Bin count used for reported ECE / cwECE.
pub const DEFAULT_ECE_BINS: usize = 15;
/// Bin count used for reliability diagrams.
pub const DEFAULT_RELIABILITY_BINS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinningKind {
    /// `m` bins of width `1/m` over `[0, 1]`.
    EqualWidth,
    /// `m` quantile bins of (almost) equal count; ties broken by sample index.
    EqualMass,
    /// One bin per distinct value.
    Singleton,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BinningScheme {
    kind: BinningKind,
    m: usize,
}

impl BinningScheme {
    pub fn new(kind: BinningKind, m: usize) -> Result<Self> {
        if m == 0 && kind != BinningKind::Singleton {
            return Err(Error::InvalidArgument("bin count must be >= 1".into()));
        }
        Ok(Self { kind, m: m.max(1) })
    }

    pub fn equal_width(m: usize) -> Result<Self> {
        Self::new(BinningKind::EqualWidth, m)
    }

    pub fn equal_mass(m: usize) -> Result<Self> {
        Self::new(BinningKind::EqualMass, m)
    }

    pub fn singleton() -> Self {
        Self {
            kind: BinningKind::Singleton,
            m: 1,
        }
    }

    pub fn kind(&self) -> BinningKind {
        self.kind
    }

    pub fn bins(&self) -> usize {
        self.m
    }

    /// Groups sample indices into bins over `values`, bins in ascending value order.
    pub fn assign(&self, values: &[f64]) -> Vec<Vec<usize>> {
        match self.kind {
            BinningKind::EqualWidth => {
                let mut bins = vec![Vec::new(); self.m];
                for (i, &v) in values.iter().enumerate() {
                    bins[equal_width_bin(v, self.m)].push(i);
                }
                bins
            }
            BinningKind::EqualMass => {
                let order = sorted_indices(values);
                let n = order.len();
                (0..self.m)
                    .map(|b| order[b * n / self.m..(b + 1) * n / self.m].to_vec())
                    .collect()
            }
            BinningKind::Singleton => {
                let order = sorted_indices(values);
                let mut bins: Vec<Vec<usize>> = Vec::new();
                for i in order {
                    match bins.last_mut() {
                        Some(last) if values[last[0]] == values[i] => last.push(i),
                        _ => bins.push(vec![i]),
                    }
                }
                bins
            }
        }
    }
}

impl fmt::Display for BinningKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BinningKind::EqualWidth => "ew",
            BinningKind::EqualMass => "em",
            BinningKind::Singleton => "singleton",
        })
    }
}

impl FromStr for BinningKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ew" => Ok(BinningKind::EqualWidth),
            "em" => Ok(BinningKind::EqualMass),
            "singleton" => Ok(BinningKind::Singleton),
            other => Err(Error::InvalidArgument(format!(
                "unknown binning '{other}' (expected ew, em or singleton)"
            ))),
        }
    }
}

fn equal_width_bin(v: f64, m: usize) -> usize {
    ((v * m as f64).floor().max(0.0) as usize).min(m - 1)
}

fn sorted_indices(values: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
    idx
}

/// `Σ_b (n_b/n) |mean(targets_b) − mean(values_b)|`; empty bins are skipped.
pub fn binned_gap(values: &[f64], targets: &[f64], scheme: &BinningScheme) -> f64 {
    let n = values.len() as f64;
    let mut total = 0.0;
    for bin in scheme.assign(values) {
        if bin.is_empty() {
            continue;
        }
        let nb = bin.len() as f64;
        let conf = bin.iter().map(|&i| values[i]).sum::<f64>() / nb;
        let acc = bin.iter().map(|&i| targets[i]).sum::<f64>() / nb;
        total += nb / n * (acc - conf).abs();
    }
    total
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RiskCoveragePoint {
    pub coverage: f64,
    pub selective_risk: f64,
}

fn check_pairs(losses: &[f64], scores: &[f64]) -> Result<()> {
    if losses.is_empty() {
        return Err(Error::InvalidArgument("risk-coverage curve of zero samples".into()));
    }
    if losses.len() != scores.len() {
        return Err(Error::Shape(format!(
            "{} losses but {} scores",
            losses.len(),
            scores.len()
        )));
    }
    Ok(())
}

/// Selective risk when keeping the `i` most confident samples, `i = 1..n`.
///
/// Tied scores are ordered by the same stable rule as [`hard_rank_ascending`].
pub fn risk_coverage_curve(losses: &[f64], scores: &[f64]) -> Result<Vec<RiskCoveragePoint>> {
    check_pairs(losses, scores)?;
    let ranks = hard_rank_ascending(scores)?;
    let n = losses.len();
    let mut by_rank = vec![0.0; n];
    for (i, &r) in ranks.iter().enumerate() {
        by_rank[n - r] = losses[i];
    }
    let mut acc = 0.0;
    Ok(by_rank
        .iter()
        .enumerate()
        .map(|(i, &l)| {
            acc += l;
            RiskCoveragePoint {
                coverage: (i + 1) as f64 / n as f64,
                selective_risk: acc / (i + 1) as f64,
            }
        })
        .collect())
}

/// Mean selective risk over the `n` coverage levels.
pub fn aurc_curve(losses: &[f64], scores: &[f64]) -> Result<f64> {
    let curve = risk_coverage_curve(losses, scores)?;
    Ok(curve.iter().map(|p| p.selective_risk).sum::<f64>() / curve.len() as f64)
}

/// Monte-Carlo AURC with hard ranks: `(1/n) Σ −ln(1 − r_i/(n+1)) ℓ_i`.
pub fn aurc_mc(losses: &[f64], scores: &[f64]) -> Result<f64> {
    check_pairs(losses, scores)?;
    let ranks = hard_rank_ascending(scores)?;
    let denom = (losses.len() + 1) as f64;
    let total: f64 = ranks
        .iter()
        .zip(losses)
        .map(|(&r, &l)| aurc_weight(r as f64 / denom) * l)
        .sum();
    Ok(total / losses.len() as f64)
}

/// Top-label confidence and correctness indicator for each row.
pub fn top_label(p: &ProbBatch, labels: &LabelBatch) -> (Vec<f64>, Vec<f64>) {
    p.rows()
        .zip(labels.classes())
        .map(|(row, &y)| {
            let top = argmax(row);
            (row[top], if top == y { 1.0 } else { 0.0 })
        })
        .unzip()
}

pub fn accuracy(p: &ProbBatch, labels: &LabelBatch) -> Result<f64> {
    Ok(1.0 - crate::batch::empirical_error(p, labels)?)
}

pub fn binned_ece(p: &ProbBatch, labels: &LabelBatch, scheme: &BinningScheme) -> Result<f64> {
    check_batch(p, labels)?;
    let (conf, correct) = top_label(p, labels);
    Ok(binned_gap(&conf, &correct, scheme))
}

/// Top-label ECE where the predicted class of each row is given explicitly
/// instead of taken as the row argmax.
pub fn binned_ece_for_predictions(
    p: &ProbBatch,
    predicted: &[usize],
    labels: &LabelBatch,
    scheme: &BinningScheme,
) -> Result<f64> {
    check_batch(p, labels)?;
    if predicted.len() != p.n() {
        return Err(Error::Shape(format!(
            "{} predictions for {} rows",
            predicted.len(),
            p.n()
        )));
    }
    if predicted.iter().any(|&c| c >= p.k()) {
        return Err(Error::InvalidArgument("predicted class out of range".into()));
    }
    let conf: Vec<f64> = p.rows().zip(predicted).map(|(row, &c)| row[c]).collect();
    let correct: Vec<f64> = predicted
        .iter()
        .zip(labels.classes())
        .map(|(a, b)| if a == b { 1.0 } else { 0.0 })
        .collect();
    Ok(binned_gap(&conf, &correct, scheme))
}

/// Class-wise binned ECE: per class, bins over `f_c(x)`, averaged over classes.
pub fn binned_cwece(p: &ProbBatch, labels: &LabelBatch, scheme: &BinningScheme) -> Result<f64> {
    check_batch(p, labels)?;
    let k = p.k();
    let mut total = 0.0;
    for c in 0..k {
        let values: Vec<f64> = p.rows().map(|row| row[c]).collect();
        let targets: Vec<f64> = labels
            .classes()
            .iter()
            .map(|&y| if y == c { 1.0 } else { 0.0 })
            .collect();
        total += binned_gap(&values, &targets, scheme);
    }
    Ok(total / k as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SupBoundsReport {
    pub sup_ece: f64,
    pub sup_cwece: f64,
    /// `err̂ / k`.
    pub bound: f64,
    pub ece_pass: bool,
    pub cwece_pass: bool,
}

/// Singleton-scheme ECE and cwECE against the `err̂/k` lower bound.
///
/// The cwECE check is strict whenever `err̂ > 0`. Both checks assume distinct
/// confidence values; exact ties can pool a correct and an incorrect sample
/// into one bin and break the bound.
pub fn sup_binning_bounds_check(p: &ProbBatch, labels: &LabelBatch) -> Result<SupBoundsReport> {
    let scheme = BinningScheme::singleton();
    let err = crate::batch::empirical_error(p, labels)?;
    let bound = err / p.k() as f64;
    let sup_ece = binned_ece(p, labels, &scheme)?;
    let sup_cwece = binned_cwece(p, labels, &scheme)?;
    Ok(SupBoundsReport {
        sup_ece,
        sup_cwece,
        bound,
        ece_pass: sup_ece >= bound,
        cwece_pass: if err > 0.0 { sup_cwece > bound } else { sup_cwece >= bound },
    })
}

/// Mean squared distance between probability rows and one-hot labels.
pub fn brier(p: &ProbBatch, labels: &LabelBatch) -> Result<f64> {
    check_batch(p, labels)?;
    let total: f64 = p
        .rows()
        .zip(labels.classes())
        .map(|(row, &y)| {
            row.iter()
                .enumerate()
                .map(|(c, &v)| {
                    let d = v - if c == y { 1.0 } else { 0.0 };
                    d * d
                })
                .sum::<f64>()
        })
        .sum();
    Ok(total / p.n() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReliabilityBin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
    /// Mean top-label confidence, `None` for empty bins.
    pub conf: Option<f64>,
    /// Accuracy, `None` for empty bins.
    pub acc: Option<f64>,
}

pub fn reliability_bins(p: &ProbBatch, labels: &LabelBatch, m: usize) -> Result<Vec<ReliabilityBin>> {
    check_batch(p, labels)?;
    let scheme = BinningScheme::equal_width(m)?;
    let (conf, correct) = top_label(p, labels);
    Ok(scheme
        .assign(&conf)
        .into_iter()
        .enumerate()
        .map(|(b, bin)| {
            let count = bin.len();
            let mean = |v: &[f64]| bin.iter().map(|&i| v[i]).sum::<f64>() / count as f64;
            ReliabilityBin {
                lo: b as f64 / m as f64,
                hi: (b + 1) as f64 / m as f64,
                count,
                conf: (count > 0).then(|| mean(&conf)),
                acc: (count > 0).then(|| mean(&correct)),
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    /// Confidences (0.9, 0.8, 0.6, 0.55), correct (1, 1, 0, 1), k = 2.
    fn hand_example() -> (ProbBatch, LabelBatch) {
        let p = ProbBatch::from_rows(&[
            vec![0.9, 0.1],
            vec![0.2, 0.8],
            vec![0.6, 0.4],
            vec![0.55, 0.45],
        ])
        .unwrap();
        (p, LabelBatch::new(vec![0, 1, 1, 0], 2).unwrap())
    }

    #[test]
    fn risk_coverage_examples() {
        let losses = [1.0, 0.5, 0.2];
        let scores = [0.1, 0.2, 0.3];
        let curve = risk_coverage_curve(&losses, &scores).unwrap();
        let expect = [(1.0 / 3.0, 0.2), (2.0 / 3.0, 0.35), (1.0, 1.7 / 3.0)];
        for (pt, (c, r)) in curve.iter().zip(expect) {
            assert_abs_diff_eq!(pt.coverage, c, epsilon = 1e-15);
            assert_abs_diff_eq!(pt.selective_risk, r, epsilon = 1e-15);
        }
        assert_abs_diff_eq!(aurc_curve(&losses, &scores).unwrap(), 0.372222, epsilon = 1e-6);
        let zero = risk_coverage_curve(&[0.0; 4], &[0.3, 0.1, 0.2, 0.9]).unwrap();
        assert!(zero.iter().all(|p| p.selective_risk == 0.0));
        let c = aurc_curve(&[0.7; 5], &[0.5, 0.1, 0.3, 0.2, 0.0]).unwrap();
        assert_abs_diff_eq!(c, 0.7, epsilon = 1e-15);
        assert!(risk_coverage_curve(&[], &[]).is_err());
        assert!(risk_coverage_curve(&[1.0], &[0.1, 0.2]).is_err());
    }

    #[test]
    fn ece_examples() {
        let (p, y) = hand_example();
        let ew2 = binned_ece(&p, &y, &BinningScheme::equal_width(2).unwrap()).unwrap();
        assert_abs_diff_eq!(ew2, 0.0375, epsilon = 1e-12);
        let single = binned_ece(&p, &y, &BinningScheme::singleton()).unwrap();
        assert_abs_diff_eq!(single, 0.3375, epsilon = 1e-12);
    }

    #[test]
    fn perfectly_matched_bins_have_zero_ece() {
        // two samples at confidence 0.5, one right and one wrong
        let p = ProbBatch::from_rows(&[vec![0.5, 0.5], vec![0.5, 0.5]]).unwrap();
        let y = LabelBatch::new(vec![0, 1], 2).unwrap();
        for scheme in [
            BinningScheme::equal_width(15).unwrap(),
            BinningScheme::equal_mass(1).unwrap(),
            BinningScheme::singleton(),
        ] {
            assert_abs_diff_eq!(binned_ece(&p, &y, &scheme).unwrap(), 0.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn cwece_examples() {
        let p = ProbBatch::from_rows(&[vec![0.7, 0.3], vec![0.4, 0.6]]).unwrap();
        let y = LabelBatch::new(vec![0, 1], 2).unwrap();
        let v = binned_cwece(&p, &y, &BinningScheme::singleton()).unwrap();
        assert_abs_diff_eq!(v, 0.35, epsilon = 1e-12);
        let sharp = ProbBatch::from_rows(&[vec![1.0, 0.0, 0.0], vec![0.0, 0.0, 1.0]]).unwrap();
        let y = LabelBatch::new(vec![0, 2], 3).unwrap();
        assert_eq!(binned_cwece(&sharp, &y, &BinningScheme::singleton()).unwrap(), 0.0);
        assert_eq!(binned_cwece(&sharp, &y, &BinningScheme::equal_width(15).unwrap()).unwrap(), 0.0);
    }

    #[test]
    fn sup_bounds_on_hand_example() {
        let (p, y) = hand_example();
        let r = sup_binning_bounds_check(&p, &y).unwrap();
        assert_abs_diff_eq!(r.bound, 0.125, epsilon = 1e-15);
        assert!(r.ece_pass && r.cwece_pass);
        let p = ProbBatch::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let y = LabelBatch::new(vec![0, 1], 2).unwrap();
        let r = sup_binning_bounds_check(&p, &y).unwrap();
        assert_eq!(r.bound, 0.0);
        assert!(r.ece_pass && r.cwece_pass);
    }

    #[test]
    fn brier_examples() {
        let p = ProbBatch::from_rows(&[vec![1.0, 0.0]]).unwrap();
        let y0 = LabelBatch::new(vec![0], 2).unwrap();
        let y1 = LabelBatch::new(vec![1], 2).unwrap();
        assert_eq!(brier(&p, &y0).unwrap(), 0.0);
        assert_eq!(brier(&p, &y1).unwrap(), 2.0);
        let u = ProbBatch::from_rows(&[vec![0.5, 0.5]]).unwrap();
        assert_eq!(brier(&u, &y0).unwrap(), 0.5);
    }

    #[test]
    fn reliability_examples() {
        let (p, y) = hand_example();
        let bins = reliability_bins(&p, &y, 10).unwrap();
        let counts: Vec<usize> = bins.iter().map(|b| b.count).collect();
        assert_eq!(counts, vec![0, 0, 0, 0, 0, 1, 1, 0, 1, 1]);
        assert!(bins[0].conf.is_none() && bins[0].acc.is_none());
        assert_abs_diff_eq!(bins[5].conf.unwrap(), 0.55, epsilon = 1e-15);
        assert_eq!(bins[6].acc, Some(0.0));
        let one = reliability_bins(&p, &y, 1).unwrap();
        assert_eq!(one[0].count, 4);
        assert_abs_diff_eq!(one[0].conf.unwrap(), 0.7125, epsilon = 1e-15);
        assert_abs_diff_eq!(one[0].acc.unwrap(), 0.75, epsilon = 1e-15);
        assert!(reliability_bins(&p, &y, 0).is_err());
    }

    #[test]
    fn equal_mass_bins_are_balanced() {
        let values = [0.9, 0.1, 0.5, 0.3, 0.7, 0.2, 0.8];
        let bins = BinningScheme::equal_mass(3).unwrap().assign(&values);
        let sizes: Vec<usize> = bins.iter().map(Vec::len).collect();
        assert_eq!(sizes, vec![2, 2, 3]);
        assert_eq!(bins[0], vec![1, 5]);
    }

    fn random_batch() -> impl Strategy<Value = (Vec<Vec<f64>>, Vec<usize>)> {
        (2usize..5, 1usize..30).prop_flat_map(|(k, n)| {
            (
                prop::collection::vec(prop::collection::vec(0.01f64..1.0, k), n),
                prop::collection::vec(0..k, n),
            )
        })
    }

    fn normalize(rows: Vec<Vec<f64>>) -> Vec<Vec<f64>> {
        rows.into_iter()
            .map(|r| {
                let s: f64 = r.iter().sum();
                r.into_iter().map(|v| v / s).collect()
            })
            .collect()
    }

    proptest! {
        #[test]
        fn selective_risks_equal_prefix_means((rows, _labels) in random_batch(), seed in 0u64..100) {
            let losses: Vec<f64> = rows.iter().map(|r| r[0] * 3.0).collect();
            let scores: Vec<f64> = rows.iter().enumerate().map(|(i, r)| r[r.len() - 1] + (i as u64 * seed % 7) as f64).collect();
            let curve = risk_coverage_curve(&losses, &scores).unwrap();
            let mut idx: Vec<usize> = (0..losses.len()).collect();
            // descending score, ties: larger index first (mirror of ascending stable ranks)
            idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(b.cmp(&a)));
            let mut prefix = 0.0;
            for (i, &j) in idx.iter().enumerate() {
                prefix += losses[j];
                prop_assert_eq!(curve[i].selective_risk, prefix / (i + 1) as f64);
            }
        }

        #[test]
        fn ece_invariant_to_sample_order((rows, labels) in random_batch()) {
            let rows = normalize(rows);
            let k = rows[0].len();
            let p = ProbBatch::from_rows(&rows).unwrap();
            let y = LabelBatch::new(labels, k).unwrap();
            let rev: Vec<usize> = (0..p.n()).rev().collect();
            let (p2, y2) = (p.select(&rev), y.select(&rev));
            for scheme in [BinningScheme::equal_width(15).unwrap(), BinningScheme::singleton()] {
                let a = binned_ece(&p, &y, &scheme).unwrap();
                let b = binned_ece(&p2, &y2, &scheme).unwrap();
                prop_assert!((a - b).abs() <= 1e-12);
            }
        }

        #[test]
        fn singleton_cwece_matches_direct_summation((rows, labels) in random_batch()) {
            let rows = normalize(rows);
            let k = rows[0].len();
            let n = rows.len();
            let p = ProbBatch::from_rows(&rows).unwrap();
            let y = LabelBatch::new(labels.clone(), k).unwrap();
            // distinct values per class with probability one, so per-sample terms
            let mut direct = 0.0;
            for (row, &y) in rows.iter().zip(&labels) {
                for (c, &v) in row.iter().enumerate() {
                    let t = if y == c { 1.0 } else { 0.0 };
                    direct += (t - v).abs();
                }
            }
            direct /= (n * k) as f64;
            let v = binned_cwece(&p, &y, &BinningScheme::singleton()).unwrap();
            prop_assert!((v - direct).abs() <= 1e-12);
        }

        #[test]
        fn brier_nonnegative((rows, labels) in random_batch()) {
            let rows = normalize(rows);
            let k = rows[0].len();
            let p = ProbBatch::from_rows(&rows).unwrap();
            let y = LabelBatch::new(labels, k).unwrap();
            prop_assert!(brier(&p, &y).unwrap() >= 0.0);
        }
    }
}
