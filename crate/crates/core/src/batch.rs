//! Logit, probability and label batches.
//!
//! Batches are dense row-major `n × k` matrices. Class indices are 0-based
//! everywhere, including the on-disk prediction dump.

use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Lower clamp applied to probabilities before taking a logarithm.
pub const PROB_FLOOR: f64 = 1e-12;

/// Row-sum tolerance for [`ProbBatch`].
pub const SIMPLEX_TOL: f64 = 1e-9;

#[inline]
pub fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_FLOOR, 1.0)
}

fn check_shape(n: usize, k: usize, len: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::Shape("batch must have at least one row".into()));
    }
    if k < 2 {
        return Err(Error::Shape(format!("need at least 2 classes, got {k}")));
    }
    if len != n * k {
        return Err(Error::Shape(format!(
            "expected {n}x{k} = {} values, got {len}",
            n * k
        )));
    }
    Ok(())
}

fn flatten(rows: &[Vec<f64>]) -> Result<(usize, usize, Vec<f64>)> {
    let n = rows.len();
    let k = rows.first().map_or(0, Vec::len);
    if let Some(i) = rows.iter().position(|r| r.len() != k) {
        return Err(Error::Shape(format!(
            "row {i} has {} columns, expected {k}",
            rows[i].len()
        )));
    }
    Ok((n, k, rows.concat()))
}

/// Unnormalized model outputs `z`.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitBatch {
    n: usize,
    k: usize,
    values: Vec<f64>,
}

impl LogitBatch {
    pub fn new(n: usize, k: usize, values: Vec<f64>) -> Result<Self> {
        check_shape(n, k, values.len())?;
        if let Some(idx) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                row: idx / k,
                col: idx % k,
            });
        }
        Ok(Self { n, k, values })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let (n, k, values) = flatten(rows)?;
        Self::new(n, k, values)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.k..(i + 1) * self.k]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks_exact(self.k)
    }

    /// Returns a new batch holding only the given rows, in the given order.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        let mut values = Vec::with_capacity(indices.len() * self.k);
        for &i in indices {
            values.extend_from_slice(self.row(i));
        }
        Self::new(indices.len(), self.k, values)
    }
}

/// Predicted probability vectors, one per row, each on the simplex.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbBatch {
    n: usize,
    k: usize,
    values: Vec<f64>,
}

impl ProbBatch {
    pub fn new(n: usize, k: usize, values: Vec<f64>) -> Result<Self> {
        check_shape(n, k, values.len())?;
        for (i, row) in values.chunks_exact(k).enumerate() {
            if let Some(c) = row.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite { row: i, col: c });
            }
            if let Some(c) = row.iter().position(|&v| !(0.0..=1.0).contains(&v)) {
                return Err(Error::InvalidArgument(format!(
                    "probability {} at row {i}, column {c} is outside [0, 1]",
                    row[c]
                )));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > SIMPLEX_TOL {
                return Err(Error::InvalidArgument(format!(
                    "row {i} sums to {sum}, not 1"
                )));
            }
        }
        Ok(Self { n, k, values })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let (n, k, values) = flatten(rows)?;
        Self::new(n, k, values)
    }

    /// Builds a batch whose rows are only required to be finite.
    ///
    /// Used to probe losses off the simplex, e.g. by finite differences.
    pub fn new_unnormalized(n: usize, k: usize, values: Vec<f64>) -> Result<Self> {
        check_shape(n, k, values.len())?;
        if let Some(idx) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                row: idx / k,
                col: idx % k,
            });
        }
        Ok(Self { n, k, values })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.k..(i + 1) * self.k]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks_exact(self.k)
    }

    pub fn select(&self, indices: &[usize]) -> Self {
        let mut values = Vec::with_capacity(indices.len() * self.k);
        for &i in indices {
            values.extend_from_slice(self.row(i));
        }
        Self {
            n: indices.len(),
            k: self.k,
            values,
        }
    }

    /// Log-probabilities (clamped), usable as logits that softmax back to `self`.
    pub fn to_log_logits(&self) -> LogitBatch {
        LogitBatch {
            n: self.n,
            k: self.k,
            values: self.values.iter().map(|&p| clamp_prob(p).ln()).collect(),
        }
    }
}

/// True class indices `y′` together with the class count.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelBatch {
    classes: Vec<usize>,
    k: usize,
}

impl LabelBatch {
    pub fn new(classes: Vec<usize>, k: usize) -> Result<Self> {
        if let Some(i) = classes.iter().position(|&c| c >= k) {
            return Err(Error::InvalidArgument(format!(
                "label {} at index {i} is not below class count {k}",
                classes[i]
            )));
        }
        Ok(Self { classes, k })
    }

    pub fn classes(&self) -> &[usize] {
        &self.classes
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            classes: indices.iter().map(|&i| self.classes[i]).collect(),
            k: self.k,
        }
    }

    /// One-hot row for sample `i`.
    pub fn one_hot(&self, i: usize) -> Vec<f64> {
        let mut row = vec![0.0; self.k];
        row[self.classes[i]] = 1.0;
        row
    }
}

/// One line of a prediction dump.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictionRecord {
    pub logits: Vec<f64>,
    pub label: usize,
}

/// Softmax of a single row with max-subtraction.
pub fn softmax_row(z: &[f64]) -> Vec<f64> {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = z.iter().map(|&v| (v - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    out.iter_mut().for_each(|v| *v /= sum);
    out
}

pub fn softmax(logits: &LogitBatch) -> ProbBatch {
    let values = logits.rows().flat_map(softmax_row).collect();
    ProbBatch {
        n: logits.n,
        k: logits.k,
        values,
    }
}

/// Index of the row maximum; ties go to the smallest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

pub fn argmax_predict(p: &ProbBatch) -> Vec<usize> {
    p.rows().map(argmax).collect()
}

fn check_labels(n: usize, k: usize, labels: &LabelBatch) -> Result<()> {
    if labels.len() != n {
        return Err(Error::Shape(format!(
            "{n} prediction rows but {} labels",
            labels.len()
        )));
    }
    if labels.k() != k {
        return Err(Error::Shape(format!(
            "predictions have {k} classes but labels declare {}",
            labels.k()
        )));
    }
    Ok(())
}

pub(crate) fn check_batch(p: &ProbBatch, labels: &LabelBatch) -> Result<()> {
    check_labels(p.n(), p.k(), labels)
}

/// Fraction of rows whose argmax differs from the label.
pub fn empirical_error(p: &ProbBatch, labels: &LabelBatch) -> Result<f64> {
    check_batch(p, labels)?;
    let wrong = p
        .rows()
        .zip(labels.classes())
        .filter(|(row, &y)| argmax(row) != y)
        .count();
    Ok(wrong as f64 / p.n() as f64)
}

/// Parses a line-delimited prediction dump.
pub fn parse_predictions<R: BufRead>(reader: R) -> Result<(LogitBatch, LabelBatch)> {
    let mut values = Vec::new();
    let mut labels = Vec::new();
    let mut k = None;
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: PredictionRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: line_no,
            msg: e.to_string(),
        })?;
        let width = *k.get_or_insert(rec.logits.len());
        if rec.logits.len() != width {
            return Err(Error::Schema {
                line: line_no,
                msg: format!("expected {width} logits, found {}", rec.logits.len()),
            });
        }
        if width < 2 {
            return Err(Error::Schema {
                line: line_no,
                msg: "need at least 2 logits".into(),
            });
        }
        if rec.label >= width {
            return Err(Error::Schema {
                line: line_no,
                msg: format!("label {} out of range for {width} classes", rec.label),
            });
        }
        if rec.logits.iter().any(|v| !v.is_finite()) {
            return Err(Error::Schema {
                line: line_no,
                msg: "non-finite logit".into(),
            });
        }
        values.extend_from_slice(&rec.logits);
        labels.push(rec.label);
    }
    let k = k.ok_or(Error::NoRecords)?;
    let n = labels.len();
    Ok((LogitBatch::new(n, k, values)?, LabelBatch::new(labels, k)?))
}

pub fn load_predictions(path: impl AsRef<Path>) -> Result<(LogitBatch, LabelBatch)> {
    let file = File::open(path)?;
    parse_predictions(BufReader::new(file))
}

pub fn write_predictions<W: Write>(
    mut writer: W,
    logits: &LogitBatch,
    labels: &LabelBatch,
) -> Result<()> {
    check_labels(logits.n(), logits.k(), labels)?;
    for (row, &label) in logits.rows().zip(labels.classes()) {
        let rec = PredictionRecord {
            logits: row.to_vec(),
            label,
        };
        serde_json::to_writer(&mut writer, &rec).map_err(std::io::Error::from)?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}
