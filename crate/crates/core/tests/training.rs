use selcal::batch::softmax;
use selcal::losses::{BaseLoss, RAurcConfig};
use selcal::oracle::{gen_mixture, MixtureSpec};
use selcal::trainer::{
    load_checkpoint, save_checkpoint, train, Activation, Dataset, Features, LossSpec, LrSchedule, Mlp,
    MlpConfig, SgdConfig,
};
use selcal::{CsfKind, Error, SoftRankConfig};

fn mixture(k: usize, radius: f64, n: usize, seed: u64) -> Dataset {
    let spec = MixtureSpec::ring(k, 2, radius, 1.0, seed).unwrap();
    let s = gen_mixture(&spec, n, 0).unwrap();
    Dataset::new(Features::new(n, 2, s.features).unwrap(), s.labels).unwrap()
}

fn mlp(k: usize, seed: u64) -> MlpConfig {
    MlpConfig {
        input: 2,
        hidden: vec![16],
        output: k,
        activation: Activation::Relu,
        seed,
    }
}

fn sgd(epochs: usize, seed: u64) -> SgdConfig {
    SgdConfig {
        schedule: LrSchedule::constant(0.05).unwrap(),
        epochs,
        seed,
        ..SgdConfig::default()
    }
}

fn raurc(lambda: f64) -> LossSpec {
    LossSpec::RAurc {
        cfg: RAurcConfig::new(lambda, CsfKind::Msp, SoftRankConfig::new(0.05).unwrap()).unwrap(),
        base: BaseLoss::CrossEntropy,
    }
}

#[test]
fn zero_lambda_follows_cross_entropy_exactly() {
    let data = mixture(3, 1.55, 600, 1);
    let xe = train(&data, &LossSpec::Mean(BaseLoss::CrossEntropy), &mlp(3, 2), &sgd(5, 3)).unwrap();
    let r0 = train(&data, &raurc(0.0), &mlp(3, 2), &sgd(5, 3)).unwrap();
    assert_eq!(xe.model, r0.model);
    assert_eq!(xe.log, r0.log);
}

#[test]
fn training_is_reproducible() {
    let data = mixture(3, 1.55, 500, 4);
    let a = train(&data, &raurc(0.5), &mlp(3, 5), &sgd(4, 6)).unwrap();
    let b = train(&data, &raurc(0.5), &mlp(3, 5), &sgd(4, 6)).unwrap();
    assert_eq!(a.model.params_flat(), b.model.params_flat());
    let c = train(&data, &raurc(0.5), &mlp(3, 5), &sgd(4, 7)).unwrap();
    assert_ne!(a.model.params_flat(), c.model.params_flat());
}

#[test]
fn separable_mixture_is_learned() {
    for seed in 0..5 {
        let data = mixture(2, 6.0, 1000, seed);
        let out = train(&data, &LossSpec::Mean(BaseLoss::CrossEntropy), &mlp(2, seed), &sgd(20, seed)).unwrap();
        let acc = out.log.last().unwrap().accuracy;
        assert!(acc >= 0.99, "seed {seed}: train accuracy {acc}");
    }
}

#[test]
fn raurc_smoothed_loss_does_not_increase() {
    let data = mixture(3, 1.55, 2000, 8);
    let out = train(&data, &raurc(0.5), &mlp(3, 9), &sgd(60, 10)).unwrap();
    let losses: Vec<f64> = out.log.iter().map(|l| l.loss).collect();
    assert!(losses.iter().all(|l| l.is_finite()));
    let smoothed: Vec<f64> = losses.windows(20).map(|w| w.iter().sum::<f64>() / 20.0).collect();
    for w in smoothed.windows(2) {
        assert!(w[1] <= w[0] + 1e-4, "smoothed loss rose: {} -> {}", w[0], w[1]);
    }
}

#[test]
fn tiny_step_moves_against_the_gradient() {
    let data = mixture(3, 1.55, 64, 11);
    let cfg = mlp(3, 12);
    let start = Mlp::new(&cfg).unwrap();
    for loss in [LossSpec::Mean(BaseLoss::CrossEntropy), raurc(0.5)] {
        let (_, g) = loss.loss_and_gradients(&start, &data.features, &data.labels).unwrap();
        let step = SgdConfig {
            schedule: LrSchedule::constant(1e-6).unwrap(),
            weight_decay: 0.0,
            batch_size: 64,
            epochs: 1,
            ..SgdConfig::default()
        };
        let out = train(&data, &loss, &cfg, &step).unwrap();
        for ((after, before), gi) in out.model.params_flat().iter().zip(start.params_flat()).zip(g.flatten()) {
            assert!((after - before + 1e-6 * gi).abs() <= 1e-15, "{after} {before} {gi}");
        }
    }
}

#[test]
fn divergence_reports_epoch_and_batch() {
    let data = mixture(3, 1.55, 256, 13);
    let wild = SgdConfig {
        schedule: LrSchedule::constant(1e300).unwrap(),
        epochs: 5,
        ..SgdConfig::default()
    };
    match train(&data, &LossSpec::Mean(BaseLoss::CrossEntropy), &mlp(3, 14), &wild) {
        Err(Error::NonFiniteLoss { epoch, batch }) => assert!(epoch < 5 && batch < 3),
        other => panic!("expected a non-finite loss, got {other:?}"),
    }
}

#[test]
fn checkpoint_file_round_trip() {
    let data = mixture(3, 1.55, 300, 15);
    let out = train(&data, &raurc(0.5), &mlp(3, 16), &sgd(2, 17)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    save_checkpoint(&path, &out.model).unwrap();
    let back = load_checkpoint(&path).unwrap();
    assert_eq!(back, out.model);
    let a = softmax(&out.model.predict(&data.features).unwrap());
    let b = softmax(&back.predict(&data.features).unwrap());
    assert_eq!(a, b);
}
