//! Exact ground truth for small problems.
//!
//! [`DiscreteDistribution`] and [`TableModel`] describe a finite joint
//! distribution and a model evaluated on its atoms, so population calibration
//! errors and the Brier score can be enumerated exactly. Closed-form AURC
//! profiles and a Gaussian-mixture generator cover the sampled side.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};

use crate::batch::{argmax, softmax_row, LabelBatch, ProbBatch, SIMPLEX_TOL};
use crate::error::{Error, Result};
use crate::losses::aurc_weight;
use crate::metrics::aurc_mc;

fn check_simplex_row(row: &[f64], what: &str, i: usize) -> Result<()> {
    let sum: f64 = row.iter().sum();
    if row.iter().any(|v| !(0.0..=1.0).contains(v)) || (sum - 1.0).abs() > SIMPLEX_TOL {
        return Err(Error::InvalidArgument(format!("{what} row {i} is not on the simplex")));
    }
    Ok(())
}

/// Finite feature atoms with marginal masses and exact class posteriors.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteDistribution {
    pub points: Vec<Vec<f64>>,
    pub px: Vec<f64>,
    pub posterior: Vec<Vec<f64>>,
}

impl DiscreteDistribution {
    pub fn new(points: Vec<Vec<f64>>, px: Vec<f64>, posterior: Vec<Vec<f64>>) -> Result<Self> {
        let m = px.len();
        if m == 0 || points.len() != m || posterior.len() != m {
            return Err(Error::Shape(format!(
                "{} points, {} masses, {} posterior rows",
                points.len(),
                m,
                posterior.len()
            )));
        }
        if px.iter().any(|&w| !(w >= 0.0)) || (px.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidArgument("atom masses must be >= 0 and sum to 1".into()));
        }
        let k = posterior[0].len();
        for (i, row) in posterior.iter().enumerate() {
            if row.len() != k || k < 2 {
                return Err(Error::Shape(format!("posterior row {i} has width {}", row.len())));
            }
            check_simplex_row(row, "posterior", i)?;
        }
        Ok(Self { points, px, posterior })
    }

    /// Atoms labelled `0..m` on a line.
    pub fn without_features(px: Vec<f64>, posterior: Vec<Vec<f64>>) -> Result<Self> {
        let points = (0..px.len()).map(|i| vec![i as f64]).collect();
        Self::new(points, px, posterior)
    }

    pub fn atoms(&self) -> usize {
        self.px.len()
    }

    pub fn k(&self) -> usize {
        self.posterior[0].len()
    }
}

/// Model outputs `f(x_m)` on each atom.
#[derive(Debug, Clone, PartialEq)]
pub struct TableModel {
    pub preds: Vec<Vec<f64>>,
}

impl TableModel {
    pub fn new(preds: Vec<Vec<f64>>) -> Result<Self> {
        for (i, row) in preds.iter().enumerate() {
            check_simplex_row(row, "prediction", i)?;
        }
        Ok(Self { preds })
    }
}

fn check_pair(dist: &DiscreteDistribution, model: &TableModel) -> Result<()> {
    if model.preds.len() != dist.atoms() {
        return Err(Error::Shape(format!(
            "model has {} rows for {} atoms",
            model.preds.len(),
            dist.atoms()
        )));
    }
    if model.preds.iter().any(|r| r.len() != dist.k()) {
        return Err(Error::Shape("model width differs from class count".into()));
    }
    Ok(())
}

fn bits(v: &[f64]) -> Vec<u64> {
    v.iter().map(|x| x.to_bits()).collect()
}

/// A level set `{x : key(f(x)) = const}` with its mass and mass-weighted posterior.
struct Group {
    mass: f64,
    posterior_mass: Vec<f64>,
}

impl Group {
    fn conditional(&self) -> Vec<f64> {
        self.posterior_mass.iter().map(|v| v / self.mass).collect()
    }
}

fn group_by<K: Ord>(
    dist: &DiscreteDistribution,
    key: impl Fn(usize) -> K,
) -> BTreeMap<K, Group> {
    let mut groups: BTreeMap<K, Group> = BTreeMap::new();
    for m in 0..dist.atoms() {
        let g = groups.entry(key(m)).or_insert_with(|| Group {
            mass: 0.0,
            posterior_mass: vec![0.0; dist.k()],
        });
        g.mass += dist.px[m];
        for (acc, &q) in g.posterior_mass.iter_mut().zip(&dist.posterior[m]) {
            *acc += dist.px[m] * q;
        }
    }
    groups.retain(|_, g| g.mass > 0.0);
    groups
}

/// `(E‖f(x) − E[y | f(x)]‖_ρ^ρ)^{1/ρ}` for `ρ ∈ {1, 2}`, grouping atoms by
/// bit-identical prediction rows.
pub fn population_ce_rho(dist: &DiscreteDistribution, model: &TableModel, rho: u32) -> Result<f64> {
    check_pair(dist, model)?;
    if rho != 1 && rho != 2 {
        return Err(Error::InvalidArgument(format!("rho must be 1 or 2, got {rho}")));
    }
    let groups = group_by(dist, |m| bits(&model.preds[m]));
    let mut total = 0.0;
    for (key, g) in &groups {
        let f: Vec<f64> = key.iter().map(|b| f64::from_bits(*b)).collect();
        let cond = g.conditional();
        let norm: f64 = f
            .iter()
            .zip(&cond)
            .map(|(a, b)| (a - b).abs().powi(rho as i32))
            .sum();
        total += g.mass * norm;
    }
    Ok(total.powf(1.0 / rho as f64))
}

/// Top-label ECE: `E|P(y = ŷ | conf) − conf|`, grouping atoms by confidence.
pub fn population_top_ece(dist: &DiscreteDistribution, model: &TableModel) -> Result<f64> {
    check_pair(dist, model)?;
    let mut groups: BTreeMap<u64, (f64, f64)> = BTreeMap::new();
    for m in 0..dist.atoms() {
        let row = &model.preds[m];
        let top = argmax(row);
        let e = groups.entry(row[top].to_bits()).or_insert((0.0, 0.0));
        e.0 += dist.px[m];
        e.1 += dist.px[m] * dist.posterior[m][top];
    }
    Ok(groups
        .into_iter()
        .filter(|(_, (mass, _))| *mass > 0.0)
        .map(|(conf, (mass, hit))| mass * (hit / mass - f64::from_bits(conf)).abs())
        .sum())
}

/// Class-wise ECE (`ρ = 1`): `(1/k) Σ_c E|f_c − P(y = c | f_c)|`.
pub fn population_cwece(dist: &DiscreteDistribution, model: &TableModel) -> Result<f64> {
    check_pair(dist, model)?;
    let k = dist.k();
    let mut total = 0.0;
    for c in 0..k {
        let groups = group_by(dist, |m| model.preds[m][c].to_bits());
        for (key, g) in groups {
            total += g.mass * (g.posterior_mass[c] / g.mass - f64::from_bits(key)).abs();
        }
    }
    Ok(total / k as f64)
}

/// `E‖f(x) − y‖²` expanded over the exact posterior.
pub fn population_brier(dist: &DiscreteDistribution, model: &TableModel) -> Result<f64> {
    check_pair(dist, model)?;
    Ok((0..dist.atoms())
        .map(|m| {
            let f = &model.preds[m];
            let q = &dist.posterior[m];
            let sq: f64 = f.iter().map(|v| v * v).sum();
            let cross: f64 = f.iter().zip(q).map(|(a, b)| a * b).sum();
            dist.px[m] * (sq - 2.0 * cross + 1.0)
        })
        .sum())
}

/// `E[Var(y | f(x))]` summed over classes, i.e. `E[1 − ‖E[y | f]‖²]`.
pub fn population_conditional_variance(dist: &DiscreteDistribution, model: &TableModel) -> Result<f64> {
    check_pair(dist, model)?;
    let groups = group_by(dist, |m| bits(&model.preds[m]));
    Ok(groups
        .values()
        .map(|g| {
            let cond = g.conditional();
            g.mass * (1.0 - cond.iter().map(|v| v * v).sum::<f64>())
        })
        .sum())
}

/// Loss as a function of the score CDF value `u = G(g)` for uniform scores.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AurcProfile {
    Constant(f64),
    /// `ℓ(u) = 1 − u`.
    Linear,
}

impl AurcProfile {
    pub fn loss(&self, u: f64) -> f64 {
        match self {
            AurcProfile::Constant(c) => *c,
            AurcProfile::Linear => 1.0 - u,
        }
    }
}

/// `∫₀¹ −ln(1 − u) ℓ(u) du` in closed form.
pub fn population_aurc_closed_form(profile: AurcProfile) -> Result<f64> {
    match profile {
        AurcProfile::Constant(c) if c.is_finite() => Ok(c),
        AurcProfile::Constant(c) => Err(Error::InvalidArgument(format!("constant loss {c}"))),
        AurcProfile::Linear => Ok(0.25),
    }
}

/// `n` i.i.d. `(loss, score)` pairs with scores uniform on `(0, 1)`.
pub fn sample_aurc_profile(profile: AurcProfile, n: usize, seed: u64) -> (Vec<f64>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let unif = Uniform::new(0.0, 1.0);
    let scores: Vec<f64> = (0..n).map(|_| unif.sample(&mut rng)).collect();
    let losses = scores.iter().map(|&u| profile.loss(u)).collect();
    (losses, scores)
}

/// Midpoint-rule quadrature of the population AURC, as an independent check
/// of [`population_aurc_closed_form`].
pub fn population_aurc_quadrature(profile: AurcProfile, intervals: usize) -> f64 {
    let h = 1.0 / intervals as f64;
    (0..intervals)
        .map(|i| {
            let u = (i as f64 + 0.5) * h;
            aurc_weight(u) * profile.loss(u) * h
        })
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AurcBoundReport {
    /// Hard-rank MC AURC under the loss-aligned CSF.
    pub lhs: f64,
    /// `n ln2 / (2(n+1)) · err̂² + ln2 / (2(n+1)) · err̂`.
    pub rhs: f64,
    /// Smallest MC AURC among the competitor CSFs.
    pub best_competitor: f64,
    pub pass: bool,
}

pub fn aurc_lower_bound(n: usize, err: f64) -> f64 {
    let c = std::f64::consts::LN_2 / (2.0 * (n as f64 + 1.0));
    n as f64 * c * err * err + c * err
}

/// Checks the empirical AURC lower bound under the cross-entropy loss.
///
/// The aligned CSF scores each sample by its negative loss. `competitors` are
/// extra score vectors (one per CSF) that must not beat it; MSP, margin and
/// negative entropy are always included.
pub fn aurc_lower_bound_check(
    p: &ProbBatch,
    labels: &LabelBatch,
    competitors: &[Vec<f64>],
) -> Result<AurcBoundReport> {
    use crate::csf::{csf_score, CsfKind};
    use crate::losses::cross_entropy;

    let err = crate::batch::empirical_error(p, labels)?;
    let losses: Vec<f64> = p
        .rows()
        .zip(labels.classes())
        .map(|(row, &y)| cross_entropy(row, y).value)
        .collect();
    let aligned: Vec<f64> = losses.iter().map(|l| -l).collect();
    let lhs = aurc_mc(&losses, &aligned)?;
    let rhs = aurc_lower_bound(p.n(), err);

    let mut best = f64::INFINITY;
    for kind in [CsfKind::Msp, CsfKind::SoftmaxMargin, CsfKind::NegativeEntropy] {
        let scores = p
            .rows()
            .map(|row| csf_score(kind, row, None))
            .collect::<Result<Vec<f64>>>()?;
        best = best.min(aurc_mc(&losses, &scores)?);
    }
    for scores in competitors {
        best = best.min(aurc_mc(&losses, scores)?);
    }
    // 1e-12 slack: equal-loss samples may be reordered between CSFs
    let pass = lhs >= rhs && lhs <= best + 1e-12;
    Ok(AurcBoundReport {
        lhs,
        rhs,
        best_competitor: best,
        pass,
    })
}

/// Isotropic Gaussian mixture.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureSpec {
    pub means: Vec<Vec<f64>>,
    pub variance: f64,
    pub priors: Vec<f64>,
    pub seed: u64,
}

impl MixtureSpec {
    /// `k` means evenly spaced on a circle of the given radius in the first two
    /// coordinates of `R^d`, equal priors.
    pub fn ring(k: usize, d: usize, radius: f64, variance: f64, seed: u64) -> Result<Self> {
        if d < 2 {
            return Err(Error::InvalidArgument("ring mixture needs d >= 2".into()));
        }
        let means = (0..k)
            .map(|c| {
                let angle = 2.0 * std::f64::consts::PI * c as f64 / k as f64;
                let mut mu = vec![0.0; d];
                mu[0] = radius * angle.cos();
                mu[1] = radius * angle.sin();
                mu
            })
            .collect();
        let spec = Self {
            means,
            variance,
            priors: vec![1.0 / k as f64; k],
            seed,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn k(&self) -> usize {
        self.means.len()
    }

    pub fn d(&self) -> usize {
        self.means.first().map_or(0, Vec::len)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.variance > 0.0) || !self.variance.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "mixture variance must be positive, got {}",
                self.variance
            )));
        }
        let k = self.k();
        if k < 2 || self.priors.len() != k {
            return Err(Error::Shape(format!("{k} means but {} priors", self.priors.len())));
        }
        if self.means.iter().any(|m| m.len() != self.d()) || self.d() == 0 {
            return Err(Error::Shape("means must share a positive dimension".into()));
        }
        check_simplex_row(&self.priors, "prior", 0)
    }

    /// Exact class posterior at `x`.
    pub fn posterior(&self, x: &[f64]) -> Vec<f64> {
        let logits: Vec<f64> = self
            .means
            .iter()
            .zip(&self.priors)
            .map(|(mu, &pi)| {
                let d2: f64 = x.iter().zip(mu).map(|(a, b)| (a - b) * (a - b)).sum();
                pi.max(f64::MIN_POSITIVE).ln() - d2 / (2.0 * self.variance)
            })
            .collect();
        softmax_row(&logits)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixtureSample {
    /// `n × d`, row-major.
    pub features: Vec<f64>,
    pub d: usize,
    pub labels: LabelBatch,
    pub posteriors: ProbBatch,
}

/// Draws `n` labelled points; the stream is fully determined by `offset` and
/// the spec seed, so train and test sets use different offsets.
pub fn gen_mixture(spec: &MixtureSpec, n: usize, offset: u64) -> Result<MixtureSample> {
    spec.validate()?;
    if n == 0 {
        return Err(Error::InvalidArgument("need at least one sample".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(offset);
    let k = spec.k();
    let d = spec.d();
    let sd = spec.variance.sqrt();
    let mut features = Vec::with_capacity(n * d);
    let mut labels = Vec::with_capacity(n);
    let mut post = Vec::with_capacity(n * k);
    for _ in 0..n {
        let u: f64 = rng.gen();
        let mut c = 0;
        let mut acc = spec.priors[0];
        while u >= acc && c + 1 < k {
            c += 1;
            acc += spec.priors[c];
        }
        let x: Vec<f64> = spec.means[c]
            .iter()
            .map(|mu| {
                let z: f64 = StandardNormal.sample(&mut rng);
                mu + sd * z
            })
            .collect();
        post.extend(spec.posterior(&x));
        features.extend(x);
        labels.push(c);
    }
    Ok(MixtureSample {
        features,
        d,
        labels: LabelBatch::new(labels, k)?,
        posteriors: ProbBatch::new(n, k, post)?,
    })
}

/// Expected error of the Bayes classifier, estimated on a sample's posteriors.
pub fn bayes_error(sample: &MixtureSample) -> f64 {
    let n = sample.posteriors.n() as f64;
    sample
        .posteriors
        .rows()
        .map(|row| 1.0 - row[argmax(row)])
        .sum::<f64>()
        / n
}

/// A random finite distribution with a model that shares prediction rows
/// across atoms (so grouping is exercised).
pub fn random_instance(rng: &mut impl Rng, atoms: usize, k: usize, distinct_preds: usize) -> (DiscreteDistribution, TableModel) {
    let simplex = |rng: &mut dyn rand::RngCore| -> Vec<f64> {
        let raw: Vec<f64> = (0..k).map(|_| -(1.0 - rng.gen::<f64>()).ln()).collect();
        let s: f64 = raw.iter().sum();
        raw.into_iter().map(|v| v / s).collect()
    };
    let raw_px: Vec<f64> = (0..atoms).map(|_| rng.gen::<f64>() + 0.05).collect();
    let total: f64 = raw_px.iter().sum();
    let mut px: Vec<f64> = raw_px.iter().map(|v| v / total).collect();
    let drift: f64 = 1.0 - px.iter().sum::<f64>();
    px[0] += drift;
    let posterior = (0..atoms).map(|_| simplex(rng)).collect();
    let pool: Vec<Vec<f64>> = (0..distinct_preds.max(1)).map(|_| simplex(rng)).collect();
    let preds = (0..atoms).map(|_| pool[rng.gen_range(0..pool.len())].clone()).collect();
    (
        DiscreteDistribution::without_features(px, posterior).expect("valid by construction"),
        TableModel { preds },
    )
}
