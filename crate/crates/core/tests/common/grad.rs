//! Finite-difference suites shared by the gradient tests and the acceptance run.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use selcal::gradcheck::{check_gradient, check_model, GradCheckReport, DEFAULT_STEP};
use selcal::losses::{mc_aurc_loss, r_aurc_loss, BaseLoss, FocusConfig, LossGrad, RAurcConfig};
use selcal::softrank::{soft_rank_ascending, soft_rank_vjp};
use selcal::trainer::{Activation, Features, LossSpec, Mlp, MlpConfig};
use selcal::{CsfKind, LabelBatch, LogitBatch, ProbBatch, SoftRankConfig};

use super::{max_abs_diff, random_batch, random_simplex};

pub const INSTANCES: usize = 100;

fn per_sample_suite(make: impl Fn(&mut ChaCha8Rng) -> BaseLoss) -> GradCheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let mut report = GradCheckReport::default();
    for _ in 0..INSTANCES {
        let k = rng.gen_range(2..6);
        let base = make(&mut rng);
        let p = random_simplex(&mut rng, k);
        let y = rng.gen_range(0..k);
        if matches!(base, BaseLoss::Fl53) && (p[y] - 0.2).abs() < 1e-3 {
            continue;
        }
        let analytic = base.eval(&p, y).grad_p;
        report = report.merge(check_gradient(|q| base.eval(q, y).value, &p, &analytic, DEFAULT_STEP));
    }
    report
}

pub fn cross_entropy() -> GradCheckReport {
    per_sample_suite(|_| BaseLoss::CrossEntropy)
}

pub fn focal() -> GradCheckReport {
    per_sample_suite(|rng| BaseLoss::Focal(FocusConfig::new(rng.gen_range(0.0..5.0)).unwrap()))
        .merge(per_sample_suite(|_| BaseLoss::Fl53))
}

pub fn inverse_focal() -> GradCheckReport {
    per_sample_suite(|rng| BaseLoss::InverseFocal(FocusConfig::new(rng.gen_range(0.0..6.0)).unwrap()))
}

pub fn soft_rank_vjp_suite() -> GradCheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(43);
    let mut report = GradCheckReport::default();
    for i in 0..INSTANCES {
        let n = rng.gen_range(2..=20);
        let cfg = SoftRankConfig::new([0.01, 0.1, 1.0][i % 3]).unwrap();
        let s: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let u: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let analytic = soft_rank_vjp(&s, &cfg, &u).unwrap();
        let f = |x: &[f64]| -> f64 {
            let r = soft_rank_ascending(x, &cfg).unwrap().ranks;
            r.iter().zip(&u).map(|(a, b)| a * b).sum()
        };
        report = report.merge(check_gradient(f, &s, &analytic, DEFAULT_STEP));
    }
    report
}

fn batch_suite(seed: u64, loss: impl Fn(&ProbBatch, &LabelBatch, usize) -> LossGrad) -> GradCheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = GradCheckReport::default();
    for i in 0..INSTANCES {
        let n = rng.gen_range(2..=10);
        let k = rng.gen_range(2..5);
        let (p, y) = random_batch(&mut rng, n, k);
        let analytic = loss(&p, &y, i).grad_p;
        let f = |v: &[f64]| {
            let probe = ProbBatch::new_unnormalized(n, k, v.to_vec()).unwrap();
            loss(&probe, &y, i).value
        };
        report = report.merge(check_gradient(f, p.values(), &analytic, DEFAULT_STEP));
    }
    report
}

const CSFS: [CsfKind; 4] = [
    CsfKind::Msp,
    CsfKind::SoftmaxMargin,
    CsfKind::NegativeEntropy,
    CsfKind::NegLossOracle,
];

pub fn mc_aurc() -> GradCheckReport {
    batch_suite(47, |p, y, i| {
        let cfg = SoftRankConfig::new([0.05, 0.5, 5.0][i % 3]).unwrap();
        mc_aurc_loss(p, y, CSFS[i % 4], &cfg, &BaseLoss::CrossEntropy).unwrap()
    })
}

pub fn r_aurc() -> GradCheckReport {
    batch_suite(53, |p, y, i| {
        let cfg = RAurcConfig::new([0.25, 0.5, 0.9][i % 3], CSFS[i % 4], SoftRankConfig::new(0.05).unwrap()).unwrap();
        r_aurc_loss(p, y, &cfg, &BaseLoss::CrossEntropy).unwrap()
    })
}

fn losses() -> Vec<LossSpec> {
    let raurc = |lambda: f64, csf| LossSpec::RAurc {
        cfg: RAurcConfig::new(lambda, csf, SoftRankConfig::new(0.05).unwrap()).unwrap(),
        base: BaseLoss::CrossEntropy,
    };
    vec![
        LossSpec::Mean(BaseLoss::CrossEntropy),
        LossSpec::Mean(BaseLoss::Focal(FocusConfig::new(2.0).unwrap())),
        LossSpec::Mean(BaseLoss::InverseFocal(FocusConfig::new(1.5).unwrap())),
        raurc(0.5, CsfKind::Msp),
        raurc(1.0, CsfKind::NegativeEntropy),
        raurc(0.5, CsfKind::SoftmaxMargin),
    ]
}

/// Rows away from the kinks of the rank and of MSP/margin: distinct rows, no
/// near-tie between the two largest logits.
fn away_from_kinks(z: &LogitBatch) -> bool {
    let gap = |r: &[f64]| {
        let mut v = r.to_vec();
        v.sort_by(|a, b| b.total_cmp(a));
        v[0] - v[1]
    };
    z.rows().all(|r| gap(r) > 1e-3)
        && (0..z.n()).all(|i| (0..i).all(|j| max_abs_diff(z.row(i), z.row(j)) > 1e-3))
}

pub fn mlp_backward() -> GradCheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(59);
    let specs = losses();
    let mut report = GradCheckReport::default();
    for i in 0..INSTANCES {
        let cfg = MlpConfig {
            input: 2,
            hidden: vec![4],
            output: 3,
            activation: if i % 2 == 0 { Activation::Tanh } else { Activation::Relu },
            seed: i as u64,
        };
        let model = Mlp::new(&cfg).unwrap();
        let n = rng.gen_range(3..=8);
        // dead relu units can leave a row at the bias, i.e. a uniform softmax
        let x = loop {
            let x = Features::new(n, 2, (0..2 * n).map(|_| rng.gen_range(-2.0..2.0)).collect()).unwrap();
            if away_from_kinks(&model.predict(&x).unwrap()) {
                break x;
            }
        };
        let y = LabelBatch::new((0..n).map(|_| rng.gen_range(0..3)).collect(), 3).unwrap();
        report = report.merge(check_model(&specs[i % specs.len()], &model, &x, &y).unwrap());
    }
    report
}
