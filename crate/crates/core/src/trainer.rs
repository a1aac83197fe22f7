//! A small multilayer perceptron trained with mini-batch SGD.
//!
//! Backpropagation is written out by hand. Losses hand back gradients w.r.t.
//! probabilities; [`softmax_backward`] turns them into logit gradients. For the
//! rank-weighted objectives the soft ranks are computed per mini-batch.

use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::batch::{softmax, LabelBatch, LogitBatch, ProbBatch};
use crate::error::{Error, Result};
use crate::losses::{mean_loss, r_aurc_loss, BaseLoss, LossGrad, RAurcConfig};
use crate::metrics::{accuracy, binned_cwece, binned_ece, BinningScheme, DEFAULT_ECE_BINS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
        }
    }

    /// Derivative expressed through the pre-activation.
    fn derivative(self, pre: f64) -> f64 {
        match self {
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => {
                let t = pre.tanh();
                1.0 - t * t
            }
        }
    }

    fn init_variance(self, fan_in: usize) -> f64 {
        match self {
            Activation::Relu => 2.0 / fan_in as f64,
            Activation::Tanh => 1.0 / fan_in as f64,
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
        })
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            other => Err(Error::InvalidArgument(format!("unknown activation '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpConfig {
    pub input: usize,
    pub hidden: Vec<usize>,
    pub output: usize,
    pub activation: Activation,
    pub seed: u64,
}

impl MlpConfig {
    fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.input];
        w.extend(&self.hidden);
        w.push(self.output);
        w
    }

    fn validate(&self) -> Result<()> {
        if self.hidden.is_empty() {
            return Err(Error::InvalidArgument("need at least one hidden layer".into()));
        }
        if self.output < 2 {
            return Err(Error::InvalidArgument("output width must be >= 2".into()));
        }
        if self.widths().contains(&0) {
            return Err(Error::InvalidArgument("layer widths must be positive".into()));
        }
        Ok(())
    }
}

/// Dense row-major `n × d` input matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Features {
    n: usize,
    d: usize,
    values: Vec<f64>,
}

impl Features {
    pub fn new(n: usize, d: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != n * d {
            return Err(Error::Shape(format!("expected {n}x{d} features, got {}", values.len())));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite feature".into()));
        }
        Ok(Self { n, d, values })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.d..(i + 1) * self.d]
    }

    pub fn select(&self, indices: &[usize]) -> Self {
        let mut values = Vec::with_capacity(indices.len() * self.d);
        for &i in indices {
            values.extend_from_slice(self.row(i));
        }
        Self {
            n: indices.len(),
            d: self.d,
            values,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    /// `outputs × inputs`, row-major.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub inputs: usize,
    pub outputs: usize,
}

impl Layer {
    /// `x · Wᵀ + b` for a row-major batch `x`.
    fn affine(&self, x: &[f64], n: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(n * self.outputs);
        for row in x.chunks_exact(self.inputs).take(n) {
            for (o, b) in self.bias.iter().enumerate() {
                let w = &self.weights[o * self.inputs..(o + 1) * self.inputs];
                out.push(b + w.iter().zip(row).map(|(a, c)| a * c).sum::<f64>());
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Layer>,
    pub activation: Activation,
    pub seed: u64,
}

/// Layer inputs and hidden pre-activations from a forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    n: usize,
    inputs: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    /// `(weights, bias)` per layer, shaped like [`Layer`].
    pub layers: Vec<(Vec<f64>, Vec<f64>)>,
}

impl Gradients {
    pub fn flatten(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|(w, b)| w.iter().chain(b).copied())
            .collect()
    }
}

impl Mlp {
    pub fn new(cfg: &MlpConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let widths = cfg.widths();
        let layers = widths
            .windows(2)
            .map(|w| {
                let (inputs, outputs) = (w[0], w[1]);
                let normal = Normal::new(0.0, cfg.activation.init_variance(inputs).sqrt())
                    .expect("positive variance");
                Layer {
                    weights: (0..inputs * outputs).map(|_| normal.sample(&mut rng)).collect(),
                    bias: vec![0.0; outputs],
                    inputs,
                    outputs,
                }
            })
            .collect();
        Ok(Self {
            layers,
            activation: cfg.activation,
            seed: cfg.seed,
        })
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn classes(&self) -> usize {
        self.layers.last().map_or(0, |l| l.outputs)
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    pub fn params_flat(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(&l.bias).copied())
            .collect()
    }

    pub fn set_params_flat(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.num_params() {
            return Err(Error::Shape(format!(
                "{} parameters for a model with {}",
                params.len(),
                self.num_params()
            )));
        }
        let mut it = params.iter().copied();
        for l in &mut self.layers {
            l.weights.iter_mut().chain(l.bias.iter_mut()).for_each(|p| {
                *p = it.next().expect("length checked");
            });
        }
        Ok(())
    }

    pub fn forward(&self, x: &Features) -> Result<(LogitBatch, ForwardCache)> {
        if x.d() != self.input_width() {
            return Err(Error::Shape(format!(
                "features have width {}, model expects {}",
                x.d(),
                self.input_width()
            )));
        }
        let n = x.n();
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len() - 1);
        let mut h = x.values().to_vec();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let z = layer.affine(&h, n);
            inputs.push(h);
            if i == last {
                h = z;
            } else {
                h = z.iter().map(|&v| self.activation.apply(v)).collect();
                pre.push(z);
            }
        }
        let logits = LogitBatch::new(n, self.classes(), h)?;
        Ok((logits, ForwardCache { n, inputs, pre }))
    }

    pub fn predict(&self, x: &Features) -> Result<LogitBatch> {
        Ok(self.forward(x)?.0)
    }

    /// Reverse-mode gradients of a scalar loss given `∂L/∂logits` (`n × k`).
    pub fn backward(&self, cache: &ForwardCache, dlogits: &[f64]) -> Result<Gradients> {
        let n = cache.n;
        if dlogits.len() != n * self.classes() || cache.inputs.len() != self.layers.len() {
            return Err(Error::Shape(format!(
                "upstream gradient has {} entries, expected {}",
                dlogits.len(),
                n * self.classes()
            )));
        }
        let mut grads = vec![(Vec::new(), Vec::new()); self.layers.len()];
        let mut delta = dlogits.to_vec();
        for (li, layer) in self.layers.iter().enumerate().rev() {
            let input = &cache.inputs[li];
            let mut gw = vec![0.0; layer.weights.len()];
            let mut gb = vec![0.0; layer.outputs];
            for (d_row, x_row) in delta.chunks_exact(layer.outputs).zip(input.chunks_exact(layer.inputs)) {
                for (o, &d) in d_row.iter().enumerate() {
                    if d == 0.0 {
                        continue;
                    }
                    gb[o] += d;
                    for (g, &x) in gw[o * layer.inputs..(o + 1) * layer.inputs].iter_mut().zip(x_row) {
                        *g += d * x;
                    }
                }
            }
            if li > 0 {
                let pre = &cache.pre[li - 1];
                let mut prev = vec![0.0; n * layer.inputs];
                for (r, d_row) in delta.chunks_exact(layer.outputs).enumerate() {
                    let out = &mut prev[r * layer.inputs..(r + 1) * layer.inputs];
                    for (o, &d) in d_row.iter().enumerate() {
                        if d == 0.0 {
                            continue;
                        }
                        let w = &layer.weights[o * layer.inputs..(o + 1) * layer.inputs];
                        for (acc, &wv) in out.iter_mut().zip(w) {
                            *acc += d * wv;
                        }
                    }
                    for (acc, &z) in out.iter_mut().zip(&pre[r * layer.inputs..(r + 1) * layer.inputs]) {
                        *acc *= self.activation.derivative(z);
                    }
                }
                delta = prev;
            }
            grads[li] = (gw, gb);
        }
        Ok(Gradients { layers: grads })
    }
}

/// `∂L/∂z` from `∂L/∂p` through a row-wise softmax: `p ⊙ (g − ⟨p, g⟩)`.
pub fn softmax_backward(p: &ProbBatch, grad_p: &[f64]) -> Vec<f64> {
    let k = p.k();
    let mut out = Vec::with_capacity(grad_p.len());
    for (row, g) in p.rows().zip(grad_p.chunks_exact(k)) {
        let dot: f64 = row.iter().zip(g).map(|(a, b)| a * b).sum();
        out.extend(row.iter().zip(g).map(|(pi, gi)| pi * (gi - dot)));
    }
    out
}

/// Training objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LossSpec {
    /// Batch mean of a per-sample loss.
    Mean(BaseLoss),
    /// `(1 − λ)·risk + λ·AURC`; plain AURC is `λ = 1`.
    RAurc { cfg: RAurcConfig, base: BaseLoss },
}

impl LossSpec {
    pub fn evaluate(&self, p: &ProbBatch, labels: &LabelBatch) -> Result<LossGrad> {
        match self {
            LossSpec::Mean(base) => mean_loss(p, labels, base),
            LossSpec::RAurc { cfg, base } => r_aurc_loss(p, labels, cfg, base),
        }
    }

    /// Loss and `∂L/∂θ` for a batch (no weight decay).
    pub fn loss_and_gradients(
        &self,
        model: &Mlp,
        x: &Features,
        labels: &LabelBatch,
    ) -> Result<(f64, Gradients)> {
        let (logits, cache) = model.forward(x)?;
        let p = softmax(&logits);
        let lg = self.evaluate(&p, labels)?;
        let dz = softmax_backward(&p, &lg.grad_p);
        Ok((lg.value, model.backward(&cache, &dz)?))
    }
}

/// Piecewise-constant learning rate: `(first_epoch, lr)` pairs, sorted.
#[derive(Debug, Clone, PartialEq)]
pub struct LrSchedule(Vec<(usize, f64)>);

impl LrSchedule {
    pub fn new(mut steps: Vec<(usize, f64)>) -> Result<Self> {
        if steps.is_empty() || steps.iter().any(|&(_, lr)| !(lr > 0.0) || !lr.is_finite()) {
            return Err(Error::InvalidArgument("learning rates must be positive".into()));
        }
        steps.sort_by_key(|s| s.0);
        steps[0].0 = 0;
        Ok(Self(steps))
    }

    pub fn constant(lr: f64) -> Result<Self> {
        Self::new(vec![(0, lr)])
    }

    pub fn at(&self, epoch: usize) -> f64 {
        self.0
            .iter()
            .take_while(|(start, _)| *start <= epoch)
            .last()
            .map(|s| s.1)
            .expect("schedule starts at epoch 0")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SgdConfig {
    pub schedule: LrSchedule,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for SgdConfig {
    fn default() -> Self {
        Self {
            schedule: LrSchedule(vec![(0, 0.01)]),
            momentum: 0.9,
            weight_decay: 5e-4,
            batch_size: 128,
            epochs: 50,
            seed: 0,
        }
    }
}

/// Heavy-ball SGD: `v ← μv + (g + wd·θ)`, `θ ← θ − η v`.
#[derive(Debug, Clone)]
pub struct Sgd {
    velocity: Vec<f64>,
    momentum: f64,
    weight_decay: f64,
}

impl Sgd {
    pub fn new(model: &Mlp, momentum: f64, weight_decay: f64) -> Self {
        Self {
            velocity: vec![0.0; model.num_params()],
            momentum,
            weight_decay,
        }
    }

    /// Gradient with the weight-decay term added.
    pub fn decayed_gradient(&self, model: &Mlp, grads: &Gradients) -> Vec<f64> {
        grads
            .flatten()
            .into_iter()
            .zip(model.params_flat())
            .map(|(g, p)| g + self.weight_decay * p)
            .collect()
    }

    pub fn step(&mut self, model: &mut Mlp, grads: &Gradients, lr: f64) {
        let g = self.decayed_gradient(model, grads);
        let mut params = model.params_flat();
        for ((p, v), g) in params.iter_mut().zip(&mut self.velocity).zip(g) {
            *v = self.momentum * *v + g;
            *p -= lr * *v;
        }
        model
            .set_params_flat(&params)
            .expect("parameter count is fixed");
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: Features,
    pub labels: LabelBatch,
}

impl Dataset {
    pub fn new(features: Features, labels: LabelBatch) -> Result<Self> {
        if features.n() != labels.len() {
            return Err(Error::Shape(format!(
                "{} feature rows but {} labels",
                features.n(),
                labels.len()
            )));
        }
        Ok(Self { features, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    /// Sample-weighted mean of the mini-batch objective.
    pub loss: f64,
    pub accuracy: f64,
    pub ece: f64,
    pub cwece: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Mlp,
    pub log: Vec<EpochLog>,
}

pub fn train(data: &Dataset, loss: &LossSpec, mlp: &MlpConfig, sgd: &SgdConfig) -> Result<TrainOutcome> {
    if sgd.batch_size == 0 {
        return Err(Error::InvalidArgument("batch size must be >= 1".into()));
    }
    if data.is_empty() {
        return Err(Error::InvalidArgument("empty training set".into()));
    }
    if data.labels.k() != mlp.output {
        return Err(Error::Shape(format!(
            "labels have {} classes, model outputs {}",
            data.labels.k(),
            mlp.output
        )));
    }
    let mut model = Mlp::new(mlp)?;
    let mut opt = Sgd::new(&model, sgd.momentum, sgd.weight_decay);
    let mut rng = ChaCha8Rng::seed_from_u64(sgd.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let scheme = BinningScheme::equal_width(DEFAULT_ECE_BINS)?;
    let mut log = Vec::with_capacity(sgd.epochs);

    for epoch in 0..sgd.epochs {
        order.shuffle(&mut rng);
        let lr = sgd.schedule.at(epoch);
        let mut total = 0.0;
        for (b, idx) in order.chunks(sgd.batch_size).enumerate() {
            let x = data.features.select(idx);
            let y = data.labels.select(idx);
            let (value, grads) = loss
                .loss_and_gradients(&model, &x, &y)
                .map_err(|e| match e {
                    Error::NonFinite { .. } => Error::NonFiniteLoss { epoch, batch: b },
                    other => other,
                })?;
            if !value.is_finite() || grads.flatten().iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFiniteLoss { epoch, batch: b });
            }
            total += value * idx.len() as f64;
            opt.step(&mut model, &grads, lr);
        }
        let p = softmax(&model.predict(&data.features).map_err(|_| Error::NonFiniteLoss {
            epoch,
            batch: order.len().div_ceil(sgd.batch_size),
        })?);
        log.push(EpochLog {
            epoch,
            loss: total / data.len() as f64,
            accuracy: accuracy(&p, &data.labels)?,
            ece: binned_ece(&p, &data.labels, &scheme)?,
            cwece: binned_cwece(&p, &data.labels, &scheme)?,
        });
    }
    Ok(TrainOutcome { model, log })
}

/// Header line of a model checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointHeader {
    pub format: String,
    pub activation: Activation,
    pub seed: u64,
    /// `[outputs, inputs]` per layer.
    pub shapes: Vec<[usize; 2]>,
}

const CHECKPOINT_FORMAT: &str = "selcal-mlp-v1";

/// One JSON header line followed by one parameter per line (weights then bias,
/// layer by layer), printed with round-trip precision.
pub fn write_checkpoint<W: Write>(mut w: W, model: &Mlp) -> Result<()> {
    let header = CheckpointHeader {
        format: CHECKPOINT_FORMAT.into(),
        activation: model.activation,
        seed: model.seed,
        shapes: model.layers.iter().map(|l| [l.outputs, l.inputs]).collect(),
    };
    serde_json::to_writer(&mut w, &header).map_err(std::io::Error::from)?;
    writeln!(w)?;
    for p in model.params_flat() {
        writeln!(w, "{p:?}")?;
    }
    Ok(())
}

pub fn read_checkpoint<R: Read>(r: R) -> Result<Mlp> {
    let mut lines = BufReader::new(r).lines();
    let header_line = lines.next().ok_or(Error::NoRecords)??;
    let header: CheckpointHeader = serde_json::from_str(&header_line).map_err(|e| Error::Parse {
        line: 1,
        msg: e.to_string(),
    })?;
    if header.format != CHECKPOINT_FORMAT {
        return Err(Error::Schema {
            line: 1,
            msg: format!("unsupported checkpoint format '{}'", header.format),
        });
    }
    if header.shapes.len() < 2 || header.shapes.windows(2).any(|w| w[0][0] != w[1][1]) {
        return Err(Error::Schema {
            line: 1,
            msg: "layer shapes do not chain".into(),
        });
    }
    let mut params = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        params.push(line.trim().parse::<f64>().map_err(|e| Error::Parse {
            line: i + 2,
            msg: e.to_string(),
        })?);
    }
    let mut model = Mlp {
        layers: header
            .shapes
            .iter()
            .map(|&[outputs, inputs]| Layer {
                weights: vec![0.0; outputs * inputs],
                bias: vec![0.0; outputs],
                inputs,
                outputs,
            })
            .collect(),
        activation: header.activation,
        seed: header.seed,
    };
    model.set_params_flat(&params)?;
    Ok(model)
}

pub fn save_checkpoint(path: impl AsRef<Path>, model: &Mlp) -> Result<()> {
    let mut f = File::create(path)?;
    write_checkpoint(&mut f, model)?;
    f.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Mlp> {
    read_checkpoint(File::open(path)?)
}

/// One line of a labelled feature file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataRecord {
    pub features: Vec<f64>,
    pub label: usize,
}

/// Reads a labelled feature file; `k` is the class count (labels must be below it).
pub fn parse_dataset<R: BufRead>(reader: R, k: usize) -> Result<Dataset> {
    let mut values = Vec::new();
    let mut labels = Vec::new();
    let mut d = None;
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: DataRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: line_no,
            msg: e.to_string(),
        })?;
        let width = *d.get_or_insert(rec.features.len());
        if rec.features.len() != width || width == 0 {
            return Err(Error::Schema {
                line: line_no,
                msg: format!("expected {width} features, found {}", rec.features.len()),
            });
        }
        if rec.label >= k {
            return Err(Error::Schema {
                line: line_no,
                msg: format!("label {} out of range for {k} classes", rec.label),
            });
        }
        values.extend(rec.features);
        labels.push(rec.label);
    }
    let d = d.ok_or(Error::NoRecords)?;
    let n = labels.len();
    Dataset::new(Features::new(n, d, values)?, LabelBatch::new(labels, k)?)
}

pub fn load_dataset(path: impl AsRef<Path>, k: usize) -> Result<Dataset> {
    parse_dataset(BufReader::new(File::open(path)?), k)
}

pub fn write_dataset<W: Write>(mut w: W, data: &Dataset) -> Result<()> {
    for i in 0..data.len() {
        let rec = DataRecord {
            features: data.features.row(i).to_vec(),
            label: data.labels.classes()[i],
        };
        serde_json::to_writer(&mut w, &rec).map_err(std::io::Error::from)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}
