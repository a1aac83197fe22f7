//! Per-sample and batch losses with gradients with respect to probabilities.
//!
//! All gradients are taken w.r.t. the probability rows `p`; composing with the
//! softmax Jacobian is the trainer's job. Per-sample losses only depend on the
//! true-class probability, so their gradient has a single nonzero entry.

use crate::batch::{check_batch, clamp_prob, LabelBatch, ProbBatch};
use crate::csf::{csf_gradient, csf_score, CsfKind};
use crate::error::{Error, Result};
use crate::softrank::{soft_rank_ascending, SoftRankConfig};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FocusConfig {
    gamma: f64,
}

impl FocusConfig {
    pub fn new(gamma: f64) -> Result<Self> {
        if !(gamma >= 0.0) || !gamma.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "focusing parameter must be finite and >= 0, got {gamma}"
            )));
        }
        Ok(Self { gamma })
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossGrad {
    pub value: f64,
    /// Same layout as the probabilities the loss was evaluated on.
    pub grad_p: Vec<f64>,
}

/// Per-sample loss used on its own or inside the AURC weighting.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum BaseLoss {
    #[default]
    CrossEntropy,
    Focal(FocusConfig),
    InverseFocal(FocusConfig),
    /// Focal loss with `γ = 5` for `p_true < 0.2` and `γ = 3` otherwise.
    Fl53,
}

fn focal_parts(p: f64, gamma: f64) -> (f64, f64) {
    let q = 1.0 - p;
    let ln_p = p.ln();
    let value = -q.powf(gamma) * ln_p;
    let slope = if gamma == 0.0 || q <= 0.0 {
        0.0
    } else {
        gamma * q.powf(gamma - 1.0) * ln_p
    };
    (value, slope - q.powf(gamma) / p)
}

fn inverse_focal_parts(p: f64, gamma: f64) -> (f64, f64) {
    let q = 1.0 + p;
    let ln_p = p.ln();
    let value = -q.powf(gamma) * ln_p;
    let slope = if gamma == 0.0 {
        0.0
    } else {
        -gamma * q.powf(gamma - 1.0) * ln_p
    };
    (value, slope - q.powf(gamma) / p)
}

impl BaseLoss {
    /// Loss value and its derivative w.r.t. the (clamped) true-class probability.
    pub fn value_and_slope(&self, p_true: f64) -> (f64, f64) {
        let p = clamp_prob(p_true);
        match self {
            BaseLoss::CrossEntropy => (-p.ln(), -1.0 / p),
            BaseLoss::Focal(cfg) => focal_parts(p, cfg.gamma),
            BaseLoss::InverseFocal(cfg) => inverse_focal_parts(p, cfg.gamma),
            BaseLoss::Fl53 => focal_parts(p, if p < 0.2 { 5.0 } else { 3.0 }),
        }
    }

    pub fn eval(&self, p: &[f64], label: usize) -> LossGrad {
        let (value, slope) = self.value_and_slope(p[label]);
        let mut grad_p = vec![0.0; p.len()];
        grad_p[label] = slope;
        LossGrad { value, grad_p }
    }
}

pub fn cross_entropy(p: &[f64], label: usize) -> LossGrad {
    BaseLoss::CrossEntropy.eval(p, label)
}

pub fn focal(p: &[f64], label: usize, cfg: &FocusConfig) -> LossGrad {
    BaseLoss::Focal(*cfg).eval(p, label)
}

pub fn inverse_focal(p: &[f64], label: usize, cfg: &FocusConfig) -> LossGrad {
    BaseLoss::InverseFocal(*cfg).eval(p, label)
}

pub fn focal_weight(p: f64, gamma: f64) -> f64 {
    (1.0 - p).powf(gamma)
}

pub fn inverse_focal_weight(p: f64, gamma: f64) -> f64 {
    (1.0 + p).powf(gamma)
}

/// `−ln(1 − u)` for a normalized rank / CDF value `u`.
pub fn aurc_weight(u: f64) -> f64 {
    -(-u).ln_1p()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CriticalGamma {
    pub gamma: f64,
    /// Probability at which the threshold is attained.
    pub p: f64,
}

/// γ above which the inverse focal loss has `∂ℓ/∂p_true > 0` somewhere in `(0, 1)`.
///
/// The derivative is positive iff `γ > (1 + p) / (p ln(1/p))`; the ratio is
/// unimodal on `(0, 1)` and is minimized by golden-section search.
pub fn inverse_focal_critical_gamma() -> CriticalGamma {
    let ratio = |p: f64| (1.0 + p) / (p * -p.ln());
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (1e-9, 1.0 - 1e-9);
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (ratio(c), ratio(d));
    while b - a > 1e-12 {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = ratio(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = ratio(d);
        }
    }
    let p = 0.5 * (a + b);
    CriticalGamma { gamma: ratio(p), p }
}

/// Grid points `i/(points+1)` where the inverse focal derivative is positive.
pub fn inverse_focal_positive_region(gamma: f64, points: usize) -> Vec<f64> {
    (1..=points)
        .map(|i| i as f64 / (points + 1) as f64)
        .filter(|&p| inverse_focal_parts(p, gamma).1 > 0.0)
        .collect()
}

fn per_sample(p: &ProbBatch, labels: &LabelBatch, base: &BaseLoss) -> Vec<LossGrad> {
    p.rows()
        .zip(labels.classes())
        .map(|(row, &y)| base.eval(row, y))
        .collect()
}

/// Batch mean of a per-sample loss; `grad_p` is `n × k` row-major.
pub fn mean_loss(p: &ProbBatch, labels: &LabelBatch, base: &BaseLoss) -> Result<LossGrad> {
    check_batch(p, labels)?;
    let n = p.n() as f64;
    let parts = per_sample(p, labels, base);
    let value = parts.iter().map(|l| l.value).sum::<f64>() / n;
    let grad_p = parts
        .into_iter()
        .flat_map(|l| l.grad_p.into_iter().map(|g| g / n))
        .collect();
    Ok(LossGrad { value, grad_p })
}

/// Monte-Carlo AURC estimate with soft ranks, and its fully coupled gradient.
///
/// `value = (1/n) Σ_i −ln(1 − r̂_i/(n+1)) · ℓ_i` where `r̂` are the soft ascending
/// ranks of the CSF scores. The gradient keeps both product-rule terms; the
/// weight term couples all rows through the soft-rank Jacobian.
pub fn mc_aurc_loss(
    p: &ProbBatch,
    labels: &LabelBatch,
    csf: CsfKind,
    softrank: &SoftRankConfig,
    base: &BaseLoss,
) -> Result<LossGrad> {
    check_batch(p, labels)?;
    let n = p.n();
    let k = p.k();
    let nf = n as f64;
    let parts = per_sample(p, labels, base);

    let scores = p
        .rows()
        .zip(&parts)
        .map(|(row, l)| csf_score(csf, row, Some(l.value)))
        .collect::<Result<Vec<f64>>>()?;
    let ranks = soft_rank_ascending(&scores, softrank)?;
    let denom = nf + 1.0;

    let mut value = 0.0;
    let mut upstream = Vec::with_capacity(n);
    let mut grad_p = vec![0.0; n * k];
    for (i, l) in parts.iter().enumerate() {
        let r = ranks.ranks[i];
        let w = aurc_weight(r / denom);
        value += w * l.value;
        for (g, lg) in grad_p[i * k..(i + 1) * k].iter_mut().zip(&l.grad_p) {
            *g = w * lg / nf;
        }
        // ∂w/∂r = 1 / (n + 1 − r)
        upstream.push(l.value / (nf * (denom - r)));
    }
    value /= nf;

    let score_grad = ranks.vjp(&upstream)?;
    for (i, (&v, row)) in score_grad.iter().zip(p.rows()).enumerate() {
        if v == 0.0 {
            continue;
        }
        let dg = match csf {
            CsfKind::NegLossOracle => parts[i].grad_p.iter().map(|g| -g).collect(),
            kind => csf_gradient(kind, row)?,
        };
        for (g, d) in grad_p[i * k..(i + 1) * k].iter_mut().zip(dg) {
            *g += v * d;
        }
    }
    Ok(LossGrad { value, grad_p })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RAurcConfig {
    lambda: f64,
    pub csf: CsfKind,
    pub softrank: SoftRankConfig,
}

impl RAurcConfig {
    pub fn new(lambda: f64, csf: CsfKind, softrank: SoftRankConfig) -> Result<Self> {
        if !(0.0..=1.0).contains(&lambda) {
            return Err(Error::InvalidArgument(format!(
                "trade-off lambda must lie in [0, 1], got {lambda}"
            )));
        }
        Ok(Self {
            lambda,
            csf,
            softrank,
        })
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }
}

impl Default for RAurcConfig {
    fn default() -> Self {
        Self {
            lambda: 0.5,
            csf: CsfKind::Msp,
            softrank: SoftRankConfig::default(),
        }
    }
}

/// `(1 − λ)·mean(ℓ) + λ·AURC`, gradients combined the same way.
pub fn r_aurc_loss(
    p: &ProbBatch,
    labels: &LabelBatch,
    cfg: &RAurcConfig,
    base: &BaseLoss,
) -> Result<LossGrad> {
    let lambda = cfg.lambda;
    if lambda == 0.0 {
        return mean_loss(p, labels, base);
    }
    let aurc = mc_aurc_loss(p, labels, cfg.csf, &cfg.softrank, base)?;
    if lambda == 1.0 {
        return Ok(aurc);
    }
    let risk = mean_loss(p, labels, base)?;
    Ok(LossGrad {
        value: (1.0 - lambda) * risk.value + lambda * aurc.value,
        grad_p: risk
            .grad_p
            .iter()
            .zip(&aurc.grad_p)
            .map(|(r, a)| (1.0 - lambda) * r + lambda * a)
            .collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightCurveRow {
    pub p: f64,
    pub focal: f64,
    pub inverse_focal: f64,
    pub aurc: f64,
    pub focal_norm: f64,
    pub inverse_focal_norm: f64,
    pub aurc_norm: f64,
}

/// Focal, inverse focal and AURC weights on `grid ⊂ [0, 1)`, raw and divided by
/// their maximum over the grid.
pub fn weight_curves(gamma: f64, grid: &[f64]) -> Result<Vec<WeightCurveRow>> {
    FocusConfig::new(gamma)?;
    if grid.is_empty() {
        return Err(Error::InvalidArgument("empty weight grid".into()));
    }
    if let Some(&bad) = grid.iter().find(|&&p| !(0.0..1.0).contains(&p)) {
        return Err(Error::InvalidArgument(format!(
            "grid point {bad} outside [0, 1)"
        )));
    }
    let mut rows: Vec<WeightCurveRow> = grid
        .iter()
        .map(|&p| WeightCurveRow {
            p,
            focal: focal_weight(p, gamma),
            inverse_focal: inverse_focal_weight(p, gamma),
            aurc: aurc_weight(p),
            focal_norm: 0.0,
            inverse_focal_norm: 0.0,
            aurc_norm: 0.0,
        })
        .collect();
    let max_of = |f: fn(&WeightCurveRow) -> f64| rows.iter().map(f).fold(0.0, f64::max);
    let (mf, mi, ma) = (max_of(|r| r.focal), max_of(|r| r.inverse_focal), max_of(|r| r.aurc));
    let norm = |v: f64, m: f64| if m > 0.0 { v / m } else { 0.0 };
    for r in &mut rows {
        r.focal_norm = norm(r.focal, mf);
        r.inverse_focal_norm = norm(r.inverse_focal, mi);
        r.aurc_norm = norm(r.aurc, ma);
    }
    Ok(rows)
}
