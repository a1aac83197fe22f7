use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::Args;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use selcal::batch::{argmax_predict, load_predictions, softmax, write_predictions};
use selcal::calibmaps::{
    apply_temperature, cwece_optimal_map, ece_optimal_map, fit_temperature, TemperatureGrid, Threshold,
};
use selcal::csf::csf_score;
use selcal::gradcheck::check_loss;
use selcal::losses::{weight_curves, BaseLoss, FocusConfig, RAurcConfig};
use selcal::metrics::{
    accuracy, aurc_curve, aurc_mc, binned_cwece, binned_ece, binned_ece_for_predictions, brier,
    reliability_bins, risk_coverage_curve, sup_binning_bounds_check, BinningKind, BinningScheme,
    DEFAULT_ECE_BINS, DEFAULT_RELIABILITY_BINS,
};
use selcal::oracle::{bayes_error, gen_mixture, MixtureSpec};
use selcal::softrank::{hard_rank_ascending, soft_rank_ascending};
use selcal::trainer::{
    load_dataset, train as fit, write_checkpoint, write_dataset, Activation, Dataset, Features, LossSpec,
    LrSchedule, MlpConfig, SgdConfig,
};
use selcal::{CsfKind, LabelBatch, LogitBatch, ProbBatch, SoftRankConfig};

use crate::config::{existing_file, invalid, parse_with, require, CliError, CliResult};
use crate::output::{cell, print_report, write_atomic, write_csv};

const GRADCHECK_TOL: f64 = 1e-4;

fn create_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::Invalid(format!("cannot create {}: {e}", dir.display())))
}

fn parse_list(text: &str, flag: &str) -> CliResult<Vec<f64>> {
    text.split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|e| CliError::Invalid(format!("--{flag}: '{s}': {e}")))
        })
        .collect()
}

fn write_dump(path: &Path, logits: &LogitBatch, labels: &LabelBatch) -> CliResult<()> {
    write_atomic(path, |w| write_predictions(w, logits, labels).map_err(CliError::from))
}

fn scheme(kind: BinningKind, bins: usize) -> CliResult<BinningScheme> {
    Ok(BinningScheme::new(kind, bins)?)
}

/// Loss names: `xe`, `focal`, `fl53`, `invfocal`, `aurc` (λ = 1), `raurc`.
fn loss_spec(name: &str, gamma: Option<f64>, lambda: Option<f64>, epsilon: Option<f64>, csf: Option<&str>) -> CliResult<LossSpec> {
    let focus = || FocusConfig::new(gamma.unwrap_or(3.0));
    let ranked = |lambda: f64| -> CliResult<LossSpec> {
        let softrank = SoftRankConfig::new(epsilon.unwrap_or(0.05))?;
        let csf: CsfKind = parse_with(csf, "msp")?;
        Ok(LossSpec::RAurc {
            cfg: RAurcConfig::new(lambda, csf, softrank)?,
            base: BaseLoss::CrossEntropy,
        })
    };
    match name {
        "xe" => Ok(LossSpec::Mean(BaseLoss::CrossEntropy)),
        "focal" => Ok(LossSpec::Mean(BaseLoss::Focal(focus()?))),
        "fl53" => Ok(LossSpec::Mean(BaseLoss::Fl53)),
        "invfocal" => Ok(LossSpec::Mean(BaseLoss::InverseFocal(focus()?))),
        "aurc" => ranked(1.0),
        "raurc" => ranked(lambda.unwrap_or(0.5)),
        other => invalid(format!(
            "unknown loss '{other}' (expected xe|focal|fl53|invfocal|aurc|raurc)"
        )),
    }
}

#[derive(Debug, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenDataArgs {
    /// Directory for train.jsonl and test.jsonl.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Training samples (default 4000).
    #[arg(long)]
    pub n: Option<usize>,
    /// Test samples (default 2000).
    #[arg(long)]
    pub n_test: Option<usize>,
    /// Number of classes (default 3).
    #[arg(long)]
    pub classes: Option<usize>,
    /// Feature dimension (default 2).
    #[arg(long)]
    pub dim: Option<usize>,
    /// Distance of the class means from the origin (default 1.55).
    #[arg(long)]
    pub radius: Option<f64>,
    /// Per-coordinate variance (default 1).
    #[arg(long)]
    pub variance: Option<f64>,
}

pub fn gen_data(a: GenDataArgs) -> CliResult<u8> {
    let dir = require(a.out_dir, "out-dir")?;
    let spec = MixtureSpec::ring(
        a.classes.unwrap_or(3),
        a.dim.unwrap_or(2),
        a.radius.unwrap_or(1.55),
        a.variance.unwrap_or(1.0),
        a.seed.unwrap_or(0),
    )?;
    let (n, n_test) = (a.n.unwrap_or(4000), a.n_test.unwrap_or(2000));
    let train = gen_mixture(&spec, n, 0)?;
    let test = gen_mixture(&spec, n_test, 1)?;
    create_dir(&dir)?;
    let mut bayes = Vec::new();
    for (name, sample) in [("train.jsonl", train), ("test.jsonl", test)] {
        bayes.push(bayes_error(&sample));
        let rows = sample.labels.len();
        let data = Dataset::new(Features::new(rows, sample.d, sample.features)?, sample.labels)?;
        write_atomic(&dir.join(name), |w| write_dataset(w, &data).map_err(CliError::from))?;
    }
    print_report(json!({
        "n_train": n,
        "n_test": n_test,
        "classes": spec.k(),
        "dim": spec.d(),
        "bayes_error_train": bayes[0],
        "bayes_error_test": bayes[1],
    }))?;
    Ok(0)
}

#[derive(Debug, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainArgs {
    /// Training set (JSONL with `features` and `label`).
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Optional held-out set evaluated after training.
    #[arg(long)]
    pub test: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// xe | focal | fl53 | invfocal | aurc | raurc (default xe).
    #[arg(long)]
    pub loss: Option<String>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// msp | margin | negentropy | negloss (default msp).
    #[arg(long)]
    pub csf: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Initial learning rate (default 0.05).
    #[arg(long)]
    pub lr: Option<f64>,
    /// Learning-rate drops as `epoch:lr,epoch:lr`.
    #[arg(long)]
    pub lr_steps: Option<String>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub momentum: Option<f64>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    /// Hidden widths, comma separated (default 32,32).
    #[arg(long)]
    pub hidden: Option<String>,
    /// relu | tanh (default relu).
    #[arg(long)]
    pub activation: Option<String>,
    /// Number of classes; inferred from the labels when omitted.
    #[arg(long)]
    pub classes: Option<usize>,
    /// Also write prediction dumps for the training (and test) set.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub export_preds: Option<bool>,
}

fn load_labelled(path: &Path, classes: Option<usize>) -> CliResult<Dataset> {
    match classes {
        Some(k) => Ok(load_dataset(path, k)?),
        None => Ok(load_dataset(path, usize::MAX)?),
    }
}

fn with_classes(data: Dataset, k: usize) -> CliResult<Dataset> {
    let labels = LabelBatch::new(data.labels.classes().to_vec(), k)?;
    Ok(Dataset::new(data.features, labels)?)
}

fn lr_schedule(lr: f64, steps: Option<&str>) -> CliResult<LrSchedule> {
    let mut pairs = vec![(0, lr)];
    if let Some(text) = steps {
        for part in text.split(',') {
            let (epoch, rate) = part
                .split_once(':')
                .ok_or_else(|| CliError::Invalid(format!("--lr-steps: expected epoch:lr, got '{part}'")))?;
            let epoch = epoch
                .trim()
                .parse::<usize>()
                .map_err(|e| CliError::Invalid(format!("--lr-steps: {e}")))?;
            let rate = rate
                .trim()
                .parse::<f64>()
                .map_err(|e| CliError::Invalid(format!("--lr-steps: {e}")))?;
            if epoch == 0 {
                return invalid("--lr-steps: use --lr for epoch 0");
            }
            pairs.push((epoch, rate));
        }
    }
    Ok(LrSchedule::new(pairs)?)
}

fn summary(p: &ProbBatch, labels: &LabelBatch) -> CliResult<Value> {
    let ew = BinningScheme::equal_width(DEFAULT_ECE_BINS)?;
    Ok(json!({
        "acc": accuracy(p, labels)?,
        "ece_ew": binned_ece(p, labels, &ew)?,
        "cwece_ew": binned_cwece(p, labels, &ew)?,
        "cwece_singleton": binned_cwece(p, labels, &BinningScheme::singleton())?,
        "brier": brier(p, labels)?,
    }))
}

pub fn train(a: TrainArgs) -> CliResult<u8> {
    let data_path = require(a.data, "data")?;
    existing_file(&data_path)?;
    if let Some(t) = &a.test {
        existing_file(t)?;
    }
    let dir = require(a.out_dir, "out-dir")?;
    let loss = loss_spec(
        a.loss.as_deref().unwrap_or("xe"),
        a.gamma,
        a.lambda,
        a.epsilon,
        a.csf.as_deref(),
    )?;
    let hidden = a
        .hidden
        .as_deref()
        .unwrap_or("32,32")
        .split(',')
        .map(|s| {
            s.trim()
                .parse::<usize>()
                .map_err(|e| CliError::Invalid(format!("--hidden: '{s}': {e}")))
        })
        .collect::<CliResult<Vec<usize>>>()?;
    let activation: Activation = parse_with(a.activation.as_deref(), "relu")?;
    let seed = a.seed.unwrap_or(0);
    let sgd = SgdConfig {
        schedule: lr_schedule(a.lr.unwrap_or(0.05), a.lr_steps.as_deref())?,
        momentum: a.momentum.unwrap_or(0.9),
        weight_decay: a.weight_decay.unwrap_or(5e-4),
        batch_size: a.batch_size.unwrap_or(128),
        epochs: a.epochs.unwrap_or(50),
        seed,
    };

    let train_set = load_labelled(&data_path, a.classes)?;
    let test_set = a.test.as_deref().map(|t| load_labelled(t, a.classes)).transpose()?;
    let k = match a.classes {
        Some(k) => k,
        None => {
            let max_label = train_set
                .labels
                .classes()
                .iter()
                .chain(test_set.iter().flat_map(|t| t.labels.classes()))
                .copied()
                .max()
                .unwrap_or(0);
            (max_label + 1).max(2)
        }
    };
    let train_set = with_classes(train_set, k)?;
    let test_set = test_set.map(|t| with_classes(t, k)).transpose()?;
    if let Some(t) = &test_set {
        if t.features.d() != train_set.features.d() {
            return invalid("test features differ in width from the training features");
        }
    }
    create_dir(&dir)?;

    let mlp = MlpConfig {
        input: train_set.features.d(),
        hidden,
        output: k,
        activation,
        seed,
    };
    let out = fit(&train_set, &loss, &mlp, &sgd)?;

    let ckpt = dir.join("model.ckpt");
    write_atomic(&ckpt, |w| {
        write_checkpoint(w, &out.model).map_err(CliError::from)
    })?;
    write_csv(
        &dir.join("train_log.csv"),
        "epoch,loss,acc,ece,cwece",
        out.log.iter().map(|l| {
            format!(
                "{},{},{},{},{}",
                l.epoch,
                cell(Some(l.loss)),
                cell(Some(l.accuracy)),
                cell(Some(l.ece)),
                cell(Some(l.cwece))
            )
        }),
    )?;

    let train_logits = out.model.predict(&train_set.features)?;
    let mut report = json!({
        "loss": a.loss.as_deref().unwrap_or("xe"),
        "epochs": sgd.epochs,
        "final_train_loss": out.log.last().map(|l| l.loss),
        "train": summary(&softmax(&train_logits), &train_set.labels)?,
    });
    let export = a.export_preds.unwrap_or(false);
    if export {
        write_dump(&dir.join("preds_train.jsonl"), &train_logits, &train_set.labels)?;
    }
    if let Some(t) = &test_set {
        let logits = out.model.predict(&t.features)?;
        report["test"] = summary(&softmax(&logits), &t.labels)?;
        if export {
            write_dump(&dir.join("preds_test.jsonl"), &logits, &t.labels)?;
        }
    }
    print_report(report)?;
    Ok(0)
}

#[derive(Debug, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalArgs {
    /// Prediction dump (JSONL with `logits` and `label`).
    #[arg(long)]
    pub preds: Option<PathBuf>,
    /// Bins for the equal-width and equal-mass estimators (default 15).
    #[arg(long)]
    pub bins: Option<usize>,
    /// Extra ECE/cwECE under ew | em | singleton.
    #[arg(long)]
    pub binning: Option<String>,
    /// Confidence score used for the risk-coverage curve (default msp).
    #[arg(long)]
    pub csf: Option<String>,
    /// Bins in the reliability CSV (default 10).
    #[arg(long)]
    pub reliability_bins: Option<usize>,
    /// Directory for reliability.csv and risk_coverage.csv.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

pub fn eval(a: EvalArgs) -> CliResult<u8> {
    let path = require(a.preds, "preds")?;
    existing_file(&path)?;
    let m = a.bins.unwrap_or(DEFAULT_ECE_BINS);
    let ew = BinningScheme::equal_width(m)?;
    let em = BinningScheme::equal_mass(m)?;
    let extra: Option<BinningKind> = a.binning.as_deref().map(|b| parse_with(Some(b), "")).transpose()?;
    let csf: CsfKind = parse_with(a.csf.as_deref(), "msp")?;
    if csf == CsfKind::NegLossOracle {
        return invalid("negloss needs per-sample losses and cannot rank a prediction dump");
    }
    let rel_bins = a.reliability_bins.unwrap_or(DEFAULT_RELIABILITY_BINS);
    if let Some(dir) = &a.out_dir {
        create_dir(dir)?;
    }

    let (logits, labels) = load_predictions(&path)?;
    let p = softmax(&logits);
    // selective risk under the 0-1 loss
    let pred = argmax_predict(&p);
    let losses: Vec<f64> = pred
        .iter()
        .zip(labels.classes())
        .map(|(a, b)| if a == b { 0.0 } else { 1.0 })
        .collect();
    let scores = p
        .rows()
        .map(|row| csf_score(csf, row, None))
        .collect::<selcal::Result<Vec<f64>>>()?;
    let sup = sup_binning_bounds_check(&p, &labels)?;
    let mut report = json!({
        "n": p.n(),
        "k": p.k(),
        "bins": m,
        "acc": accuracy(&p, &labels)?,
        "ece_ew": binned_ece(&p, &labels, &ew)?,
        "ece_em": binned_ece(&p, &labels, &em)?,
        "cwece_ew": binned_cwece(&p, &labels, &ew)?,
        "cwece_em": binned_cwece(&p, &labels, &em)?,
        "sup_ece": sup.sup_ece,
        "sup_cwece": sup.sup_cwece,
        "brier": brier(&p, &labels)?,
        "aurc_curve": aurc_curve(&losses, &scores)?,
        "aurc_mc": aurc_mc(&losses, &scores)?,
    });
    if let Some(kind) = extra {
        let s = scheme(kind, m)?;
        report["binning"] = json!(kind.to_string());
        report["ece"] = json!(binned_ece(&p, &labels, &s)?);
        report["cwece"] = json!(binned_cwece(&p, &labels, &s)?);
    }
    if let Some(dir) = &a.out_dir {
        let bins = reliability_bins(&p, &labels, rel_bins)?;
        write_csv(
            &dir.join("reliability.csv"),
            "bin_lo,bin_hi,count,conf,acc",
            bins.iter().map(|b| {
                format!(
                    "{},{},{},{},{}",
                    cell(Some(b.lo)),
                    cell(Some(b.hi)),
                    b.count,
                    cell(b.conf),
                    cell(b.acc)
                )
            }),
        )?;
        let curve = risk_coverage_curve(&losses, &scores)?;
        write_csv(
            &dir.join("risk_coverage.csv"),
            "coverage,risk",
            curve
                .iter()
                .map(|pt| format!("{},{}", cell(Some(pt.coverage)), cell(Some(pt.selective_risk)))),
        )?;
    }
    print_report(report)?;
    Ok(0)
}

#[derive(Debug, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrateArgs {
    #[arg(long)]
    pub preds: Option<PathBuf>,
    /// temp | ece-map | cwece-map
    #[arg(long)]
    pub method: Option<String>,
    /// Acceptance threshold on the CSF score (maps only).
    #[arg(long)]
    pub tau: Option<f64>,
    /// msp | margin | negentropy (default msp).
    #[arg(long)]
    pub csf: Option<String>,
    /// Bins for the before/after metrics (default 15).
    #[arg(long)]
    pub bins: Option<usize>,
    /// ew | em | singleton (default ew).
    #[arg(long)]
    pub binning: Option<String>,
    #[arg(long)]
    pub grid_lo: Option<f64>,
    #[arg(long)]
    pub grid_hi: Option<f64>,
    #[arg(long)]
    pub grid_step: Option<f64>,
    /// Directory for calibrated.jsonl.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

/// Metrics with the predicted class held at the original argmax, so that maps
/// which flatten rejected rows are scored against the same decisions.
fn calib_metrics(p: &ProbBatch, pred: &[usize], labels: &LabelBatch, s: &BinningScheme) -> CliResult<Value> {
    Ok(json!({
        "acc": accuracy(p, labels)?,
        "ece": binned_ece_for_predictions(p, pred, labels, s)?,
        "cwece": binned_cwece(p, labels, s)?,
        "brier": brier(p, labels)?,
    }))
}

pub fn calibrate(a: CalibrateArgs) -> CliResult<u8> {
    let path = require(a.preds, "preds")?;
    existing_file(&path)?;
    let method = require(a.method, "method")?;
    let dir = require(a.out_dir, "out-dir")?;
    let kind: BinningKind = parse_with(a.binning.as_deref(), "ew")?;
    let s = scheme(kind, a.bins.unwrap_or(DEFAULT_ECE_BINS))?;
    let defaults = TemperatureGrid::default();
    let grid = TemperatureGrid {
        lo: a.grid_lo.unwrap_or(defaults.lo),
        hi: a.grid_hi.unwrap_or(defaults.hi),
        step: a.grid_step.unwrap_or(defaults.step),
    };
    let csf: CsfKind = parse_with(a.csf.as_deref(), "msp")?;
    let tau = match method.as_str() {
        "temp" => None,
        "ece-map" | "cwece-map" => {
            if csf == CsfKind::NegLossOracle {
                return invalid("negloss needs per-sample losses and cannot score a prediction dump");
            }
            Some(Threshold::new(require(a.tau, "tau")?)?)
        }
        other => return invalid(format!("unknown method '{other}' (expected temp|ece-map|cwece-map)")),
    };
    grid.points()?;
    create_dir(&dir)?;

    let (logits, labels) = load_predictions(&path)?;
    let p = softmax(&logits);
    let pred = argmax_predict(&p);
    let mut report = json!({
        "method": method,
        "binning": kind.to_string(),
        "before": calib_metrics(&p, &pred, &labels, &s)?,
    });
    let out_logits = match tau {
        None => {
            let t = fit_temperature(&logits, &labels, &grid)?;
            report["temperature"] = json!(t.value());
            report["after"] = calib_metrics(&apply_temperature(&logits, t), &pred, &labels, &s)?;
            let scaled = logits.values().iter().map(|z| z / t.value()).collect();
            LogitBatch::new(logits.n(), logits.k(), scaled)?
        }
        Some(tau) => {
            let scores = p
                .rows()
                .map(|row| csf_score(csf, row, None))
                .collect::<selcal::Result<Vec<f64>>>()?;
            let mapped = if method == "ece-map" {
                ece_optimal_map(&p, &scores, tau)?
            } else {
                cwece_optimal_map(&p, &scores, tau)?
            };
            report["tau"] = json!(tau.value());
            report["accepted"] = json!(scores.iter().filter(|&&g| g >= tau.value()).count());
            report["after"] = calib_metrics(&mapped, &pred, &labels, &s)?;
            mapped.to_log_logits()
        }
    };
    write_dump(&dir.join("calibrated.jsonl"), &out_logits, &labels)?;
    print_report(report)?;
    Ok(0)
}

#[derive(Debug, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GradcheckArgs {
    /// xe | focal | fl53 | invfocal | aurc | raurc (default raurc).
    #[arg(long)]
    pub loss: Option<String>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub csf: Option<String>,
    /// Batch size of each random instance (default 8).
    #[arg(long)]
    pub n: Option<usize>,
    /// Classes (default 3).
    #[arg(long)]
    pub k: Option<usize>,
    /// Random instances to check (default 10).
    #[arg(long)]
    pub instances: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

/// Exit code 0 iff the worst relative error is at most 1e-4.
pub fn gradcheck(a: GradcheckArgs) -> CliResult<u8> {
    let name = a.loss.unwrap_or_else(|| "raurc".into());
    let spec = loss_spec(&name, a.gamma, a.lambda, a.epsilon, a.csf.as_deref())?;
    let (n, k) = (a.n.unwrap_or(8), a.k.unwrap_or(3));
    if n == 0 || k < 2 {
        return invalid("gradcheck needs --n >= 1 and --k >= 2");
    }
    let r = check_loss(&spec, n, k, a.instances.unwrap_or(10).max(1), a.seed.unwrap_or(0))?;
    let pass = r.passes(GRADCHECK_TOL);
    let line = crate::output::round_report(json!({
        "loss": name,
        "max_rel_err": r.max_rel_error,
        "max_abs_err": r.max_abs_error,
        "checked": r.checked,
        "pass": pass,
    }));
    crate::output::print_line(&line.to_string())?;
    Ok(if pass { 0 } else { 1 })
}

#[derive(Debug, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SoftrankArgs {
    /// Comma-separated scores.
    #[arg(long, allow_hyphen_values = true)]
    pub scores: Option<String>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// Optional comma-separated upstream gradient; adds its VJP to the report.
    #[arg(long, allow_hyphen_values = true)]
    pub upstream: Option<String>,
}

pub fn softrank(a: SoftrankArgs) -> CliResult<u8> {
    let scores = parse_list(&require(a.scores, "scores")?, "scores")?;
    let cfg = SoftRankConfig::new(a.epsilon.unwrap_or(0.05))?;
    let upstream = a.upstream.as_deref().map(|u| parse_list(u, "upstream")).transpose()?;
    let r = soft_rank_ascending(&scores, &cfg)?;
    let mut report = json!({
        "epsilon": cfg.epsilon(),
        "ranks": r.ranks,
        "hard_ranks": hard_rank_ascending(&scores)?,
        "blocks": r.blocks.iter().map(|b| b.len()).collect::<Vec<_>>(),
    });
    if let Some(u) = upstream {
        report["vjp"] = json!(r.vjp(&u)?);
    }
    print_report(report)?;
    Ok(0)
}

#[derive(Debug, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightsArgs {
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Number of grid points i/grid on [0, 1) (default 101).
    #[arg(long)]
    pub grid: Option<usize>,
    /// Write weights.csv here instead of printing the CSV.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

pub fn weights(a: WeightsArgs) -> CliResult<u8> {
    let points = a.grid.unwrap_or(101);
    if points == 0 {
        return invalid("--grid must be positive");
    }
    let grid: Vec<f64> = (0..points).map(|i| i as f64 / points as f64).collect();
    let rows = weight_curves(a.gamma.unwrap_or(3.0), &grid)?;
    let header = "p,focal,inverse_focal,aurc,focal_norm,inverse_focal_norm,aurc_norm";
    let lines = rows.iter().map(|r| {
        [r.p, r.focal, r.inverse_focal, r.aurc, r.focal_norm, r.inverse_focal_norm, r.aurc_norm]
            .iter()
            .map(|&v| cell(Some(v)))
            .collect::<Vec<_>>()
            .join(",")
    });
    match a.out_dir {
        Some(dir) => {
            create_dir(&dir)?;
            write_csv(&dir.join("weights.csv"), header, lines)?;
        }
        None => {
            let mut out = std::io::stdout().lock();
            let io = |e: std::io::Error| CliError::Runtime(e.to_string());
            writeln!(out, "{header}").map_err(io)?;
            for l in lines {
                writeln!(out, "{l}").map_err(io)?;
            }
        }
    }
    Ok(0)
}
