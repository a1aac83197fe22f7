//! Central finite-difference checks for analytic gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::batch::{softmax, LabelBatch, LogitBatch};
use crate::error::Result;
use crate::trainer::{softmax_backward, Features, LossSpec, Mlp};

pub const DEFAULT_STEP: f64 = 1e-6;

/// Denominator floor for [`relative_error`].
pub const REL_FLOOR: f64 = 1e-6;

/// Central differences `(f(x + h e_i) − f(x − h e_i)) / 2h` for every coordinate.
pub fn central_difference<F>(mut f: F, x: &[f64], h: f64) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + h;
            let plus = f(&probe);
            probe[i] = orig - h;
            let minus = f(&probe);
            probe[i] = orig;
            (plus - minus) / (2.0 * h)
        })
        .collect()
}

/// `|a − b| / max(|a|, |b|, REL_FLOOR)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(REL_FLOOR)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub checked: usize,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_error <= tol
    }

    /// Worst case over both reports.
    pub fn merge(self, other: Self) -> Self {
        Self {
            max_rel_error: self.max_rel_error.max(other.max_rel_error),
            max_abs_error: self.max_abs_error.max(other.max_abs_error),
            checked: self.checked + other.checked,
        }
    }
}

impl Default for GradCheckReport {
    fn default() -> Self {
        Self {
            max_rel_error: 0.0,
            max_abs_error: 0.0,
            checked: 0,
        }
    }
}

pub fn compare(analytic: &[f64], numeric: &[f64]) -> GradCheckReport {
    assert_eq!(analytic.len(), numeric.len(), "gradient lengths differ");
    analytic
        .iter()
        .zip(numeric)
        .fold(GradCheckReport::default(), |acc, (&a, &n)| GradCheckReport {
            max_rel_error: acc.max_rel_error.max(relative_error(a, n)),
            max_abs_error: acc.max_abs_error.max((a - n).abs()),
            checked: acc.checked + 1,
        })
}

pub fn check_gradient<F>(f: F, x: &[f64], analytic: &[f64], h: f64) -> GradCheckReport
where
    F: FnMut(&[f64]) -> f64,
{
    compare(analytic, &central_difference(f, x, h))
}

/// Checks `∂L/∂z` of `L(softmax(z))` for a batch of logits.
pub fn check_logit_loss(spec: &LossSpec, logits: &LogitBatch, labels: &LabelBatch) -> Result<GradCheckReport> {
    let p = softmax(logits);
    let analytic = softmax_backward(&p, &spec.evaluate(&p, labels)?.grad_p);
    let (n, k) = (logits.n(), logits.k());
    let mut failure = None;
    let report = check_gradient(
        |z| {
            let probe = LogitBatch::new(n, k, z.to_vec()).expect("finite probe");
            match spec.evaluate(&softmax(&probe), labels) {
                Ok(l) => l.value,
                Err(e) => {
                    failure.get_or_insert(e);
                    f64::NAN
                }
            }
        },
        logits.values(),
        &analytic,
        DEFAULT_STEP,
    );
    match failure {
        Some(e) => Err(e),
        None => Ok(report),
    }
}

/// Checks every parameter gradient of a model under `spec`.
pub fn check_model(spec: &LossSpec, model: &Mlp, x: &Features, labels: &LabelBatch) -> Result<GradCheckReport> {
    let (_, grads) = spec.loss_and_gradients(model, x, labels)?;
    let mut probe = model.clone();
    let mut failure = None;
    let report = check_gradient(
        |theta| {
            probe.set_params_flat(theta).expect("same parameter count");
            match spec.loss_and_gradients(&probe, x, labels) {
                Ok((v, _)) => v,
                Err(e) => {
                    failure.get_or_insert(e);
                    f64::NAN
                }
            }
        },
        &model.params_flat(),
        &grads.flatten(),
        DEFAULT_STEP,
    );
    match failure {
        Some(e) => Err(e),
        None => Ok(report),
    }
}

/// Standard-normal logits scaled by `scale` with uniform random labels.
pub fn random_logit_instance(n: usize, k: usize, scale: f64, seed: u64) -> Result<(LogitBatch, LabelBatch)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let values = (0..n * k)
        .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
        .collect();
    let labels = (0..n).map(|_| rng.gen_range(0..k)).collect();
    Ok((LogitBatch::new(n, k, values)?, LabelBatch::new(labels, k)?))
}

/// Worst report over `instances` seeded logit batches starting at `seed`.
pub fn check_loss(spec: &LossSpec, n: usize, k: usize, instances: usize, seed: u64) -> Result<GradCheckReport> {
    let mut report = GradCheckReport::default();
    for s in 0..instances as u64 {
        let (z, y) = random_logit_instance(n, k, 1.5, seed.wrapping_add(s))?;
        report = report.merge(check_logit_loss(spec, &z, &y)?);
    }
    Ok(report)
}
