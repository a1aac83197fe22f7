//! Post-hoc calibration maps.
//!
//! The two threshold maps sharpen rows the confidence score accepts (`g ≥ τ`)
//! to one-hot and lower the top-class mass of rejected rows. Temperature scaling
//! divides logits by a scalar fitted on binned ECE.

use crate::batch::{argmax, softmax, softmax_row, LabelBatch, LogitBatch, ProbBatch};
use crate::error::{Error, Result};
use crate::metrics::{binned_ece, BinningScheme, DEFAULT_ECE_BINS};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Threshold(f64);

impl Threshold {
    pub fn new(tau: f64) -> Result<Self> {
        if !tau.is_finite() {
            return Err(Error::InvalidArgument(format!("threshold must be finite, got {tau}")));
        }
        Ok(Self(tau))
    }

    pub fn value(&self) -> f64 {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Temperature(f64);

impl Temperature {
    pub fn new(t: f64) -> Result<Self> {
        if !(t > 0.0) || t.is_nan() {
            return Err(Error::InvalidArgument(format!("temperature must be > 0, got {t}")));
        }
        Ok(Self(t))
    }

    pub fn value(&self) -> f64 {
        self.0
    }
}

fn check_map_inputs(p: &ProbBatch, scores: &[f64]) -> Result<()> {
    if p.k() < 2 {
        return Err(Error::InvalidArgument("calibration maps need k >= 2".into()));
    }
    if scores.len() != p.n() {
        return Err(Error::Shape(format!(
            "{} scores for {} rows",
            scores.len(),
            p.n()
        )));
    }
    Ok(())
}

fn one_hot(k: usize, c: usize) -> Vec<f64> {
    let mut row = vec![0.0; k];
    row[c] = 1.0;
    row
}

/// Sets the top coordinate to `new_top` and rescales the others so the row
/// still sums to one.
fn lower_top(row: &[f64], top: usize, new_top: f64) -> Vec<f64> {
    let rest = 1.0 - row[top];
    let k = row.len();
    let scale = if rest > 0.0 { (1.0 - new_top) / rest } else { 0.0 };
    row.iter()
        .enumerate()
        .map(|(c, &v)| {
            if c == top {
                new_top
            } else if rest > 0.0 {
                v * scale
            } else {
                (1.0 - new_top) / (k - 1) as f64
            }
        })
        .collect()
}

/// Accepted rows become one-hot at their top class; rejected rows become
/// uniform, the only point of the simplex whose maximum is `1/k`.
///
/// For `k > 2` a uniform row no longer identifies the original top class, so
/// top-label metrics of the mapped batch should be evaluated against the
/// original predictions (see [`crate::metrics::binned_ece_for_predictions`]).
pub fn ece_optimal_map(p: &ProbBatch, scores: &[f64], tau: Threshold) -> Result<ProbBatch> {
    check_map_inputs(p, scores)?;
    let k = p.k();
    let uniform = vec![1.0 / k as f64; k];
    let mut values = Vec::with_capacity(p.n() * k);
    for (row, &s) in p.rows().zip(scores) {
        if s >= tau.value() {
            values.extend(one_hot(k, argmax(row)));
        } else {
            values.extend_from_slice(&uniform);
        }
    }
    ProbBatch::new(p.n(), k, values)
}

/// Accepted rows become one-hot at their top class; rejected rows get their top
/// mass capped at `1/2`, the removed mass spread proportionally over the rest.
pub fn cwece_optimal_map(p: &ProbBatch, scores: &[f64], tau: Threshold) -> Result<ProbBatch> {
    check_map_inputs(p, scores)?;
    let k = p.k();
    let mut values = Vec::with_capacity(p.n() * k);
    for (row, &s) in p.rows().zip(scores) {
        let top = argmax(row);
        if s >= tau.value() {
            values.extend(one_hot(k, top));
        } else if row[top] > 0.5 {
            values.extend(lower_top(row, top, 0.5));
        } else {
            values.extend_from_slice(row);
        }
    }
    ProbBatch::new(p.n(), k, values)
}

pub fn apply_temperature(logits: &LogitBatch, t: Temperature) -> ProbBatch {
    if t.value() == 1.0 {
        return softmax(logits);
    }
    let values: Vec<f64> = logits
        .rows()
        .flat_map(|row| {
            let scaled: Vec<f64> = row.iter().map(|z| z / t.value()).collect();
            softmax_row(&scaled)
        })
        .collect();
    ProbBatch::new_unnormalized(logits.n(), logits.k(), values)
        .expect("softmax of finite logits is finite")
}

/// Candidate temperatures `lo, lo + step, …` up to `hi`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TemperatureGrid {
    pub lo: f64,
    pub hi: f64,
    pub step: f64,
}

impl Default for TemperatureGrid {
    fn default() -> Self {
        Self {
            lo: 0.5,
            hi: 3.0,
            step: 0.01,
        }
    }
}

impl TemperatureGrid {
    pub fn points(&self) -> Result<Vec<f64>> {
        if !(self.lo > 0.0) || !(self.step > 0.0) || !self.hi.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "temperature grid needs lo > 0 and step > 0, got {self:?}"
            )));
        }
        if self.hi < self.lo {
            return Err(Error::InvalidArgument("empty temperature grid".into()));
        }
        let count = ((self.hi - self.lo) / self.step + 1e-9).floor() as usize + 1;
        // round to 1e-9 so that e.g. 1.0 is hit exactly
        Ok((0..count)
            .map(|i| ((self.lo + i as f64 * self.step) * 1e9).round() / 1e9)
            .collect())
    }
}

/// Grid search for the temperature minimizing 15-bin equal-width ECE; ties go
/// to the smallest temperature.
pub fn fit_temperature(
    logits: &LogitBatch,
    labels: &LabelBatch,
    grid: &TemperatureGrid,
) -> Result<Temperature> {
    let scheme = BinningScheme::equal_width(DEFAULT_ECE_BINS)?;
    let mut best: Option<(f64, f64)> = None;
    for t in grid.points()? {
        let p = apply_temperature(logits, Temperature::new(t)?);
        let ece = binned_ece(&p, labels, &scheme)?;
        if best.is_none_or(|(_, b)| ece < b) {
            best = Some((t, ece));
        }
    }
    let (t, _) = best.ok_or_else(|| Error::InvalidArgument("empty temperature grid".into()))?;
    Temperature::new(t)
}
