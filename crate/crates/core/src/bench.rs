//! Experiment harness: one training configuration end to end, the
//! single-neuron XOR search, and table rendering.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::activations::{self, ActivationKind, PRELU_INIT_ALPHA};
use crate::autodiff::Tape;
use crate::data::{self, Dataset, SplitSpec};
use crate::error::{Error, Result};
use crate::nn::{self, Mode, Model};
use crate::optim::{clip_grad_norm, OptimizerConfig, OptimizerState};
use crate::rng::Rng;
use crate::tensor::Tensor;

pub const LIBRARY_VERSION: &str = env!("CARGO_PKG_VERSION");
pub const ARCHITECTURE: &str = "AlexNet";
const EVAL_CHUNK: usize = 500;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    Mnist,
    Cifar10,
}

impl DatasetKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::Mnist => "mnist",
            Self::Cifar10 => "cifar10",
        }
    }

    pub fn input_shape(self) -> [usize; 3] {
        match self {
            Self::Mnist => [1, 28, 28],
            Self::Cifar10 => [3, 32, 32],
        }
    }

    pub fn default_data_dir(self) -> PathBuf {
        match self {
            Self::Mnist => PathBuf::from("data/mnist"),
            Self::Cifar10 => PathBuf::from("data/cifar-10-batches-bin"),
        }
    }

    /// `(train, test)` from `dir`.
    pub fn load(self, dir: &Path) -> Result<(Dataset, Dataset)> {
        match self {
            Self::Mnist => data::load_mnist(dir),
            Self::Cifar10 => data::load_cifar10(dir),
        }
    }
}

impl fmt::Display for DatasetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DatasetKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mnist" => Ok(Self::Mnist),
            "cifar10" | "cifar-10" => Ok(Self::Cifar10),
            other => Err(Error::InvalidConfig(format!("unknown dataset {other:?} (expected mnist|cifar10)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub dataset: DatasetKind,
    pub data_dir: PathBuf,
    pub conv_activation: ActivationKind,
    pub dense_activation: ActivationKind,
    pub optimizer: OptimizerConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub val_fraction: f64,
    pub seed: u64,
    pub train_subset: Option<usize>,
    pub grad_clip: Option<f64>,
}

/// Named configurations shipped with the library.
pub const PRESETS: [&str; 4] = ["mnist-full", "cifar10-full", "mnist-desk", "cifar10-desk"];

impl ExperimentConfig {
    /// Full-data defaults for `dataset`: Adam for MNIST over 40 epochs, SGD
    /// with momentum for CIFAR-10 over 50 epochs.
    pub fn defaults(dataset: DatasetKind) -> Self {
        let (optimizer, epochs) = match dataset {
            DatasetKind::Mnist => (OptimizerConfig::ADAM_DEFAULT, 40),
            DatasetKind::Cifar10 => (OptimizerConfig::SGD_DEFAULT, 50),
        };
        Self {
            dataset,
            data_dir: dataset.default_data_dir(),
            conv_activation: ActivationKind::Relu,
            dense_activation: ActivationKind::Relu,
            optimizer,
            epochs,
            batch_size: 128,
            val_fraction: 0.1,
            seed: 0,
            train_subset: None,
            grad_clip: None,
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        Ok(match name {
            "mnist-full" => Self::defaults(DatasetKind::Mnist),
            "cifar10-full" => Self::defaults(DatasetKind::Cifar10),
            "mnist-desk" => Self {
                epochs: 3,
                train_subset: Some(8192),
                ..Self::defaults(DatasetKind::Mnist)
            },
            "cifar10-desk" => Self {
                epochs: 5,
                batch_size: 64,
                train_subset: Some(10_000),
                ..Self::defaults(DatasetKind::Cifar10)
            },
            other => {
                return Err(Error::InvalidConfig(format!(
                    "unknown preset {other:?}; known: {}",
                    PRESETS.join(", ")
                )))
            }
        })
    }

    pub fn with_activations(mut self, conv: ActivationKind, dense: ActivationKind) -> Self {
        self.conv_activation = conv;
        self.dense_activation = dense;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::InvalidConfig("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be at least 1".into()));
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "val_fraction {} outside (0, 1)",
                self.val_fraction
            )));
        }
        if self.train_subset == Some(0) {
            return Err(Error::InvalidConfig("train_subset must be at least 1".into()));
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0 && c.is_finite()) {
                return Err(Error::InvalidConfig(format!("grad_clip {c} must be positive")));
            }
        }
        self.optimizer.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub library_version: String,
    pub config: ExperimentConfig,
    pub num_parameters: usize,
    pub train_examples: usize,
    pub val_examples: usize,
    pub test_examples: usize,
    /// Mean loss over the training split before the first update, in eval
    /// mode.
    pub initial_train_loss: f64,
    pub history: Vec<EpochMetrics>,
    pub test_accuracy: f64,
    pub test_loss: f64,
    pub wall_clock_seconds: f64,
}

impl RunRecord {
    pub fn last_epoch(&self) -> &EpochMetrics {
        self.history.last().expect("history has one entry per epoch")
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// The record with the timing field zeroed, so that repeated runs can be
    /// compared byte for byte.
    pub fn without_timing(&self) -> Self {
        Self {
            wall_clock_seconds: 0.0,
            ..self.clone()
        }
    }

    pub fn check_invariants(&self) -> Result<()> {
        if self.history.len() != self.config.epochs {
            return Err(Error::Report(format!(
                "history has {} entries for {} epochs",
                self.history.len(),
                self.config.epochs
            )));
        }
        let accs = self
            .history
            .iter()
            .flat_map(|h| [h.train_accuracy, h.val_accuracy])
            .chain([self.test_accuracy]);
        if accs.into_iter().any(|a| !(0.0..=1.0).contains(&a)) {
            return Err(Error::Report("accuracy outside [0, 1]".into()));
        }
        let losses = self
            .history
            .iter()
            .flat_map(|h| [h.train_loss, h.val_loss])
            .chain([self.test_loss, self.initial_train_loss]);
        if losses.into_iter().any(|l| !(l >= 0.0 && l.is_finite())) {
            return Err(Error::Report("negative or non-finite loss".into()));
        }
        Ok(())
    }
}

/// Load the configured dataset and run it.
pub fn run_experiment(config: &ExperimentConfig) -> Result<RunRecord> {
    config.validate()?;
    let (train, test) = config.dataset.load(&config.data_dir)?;
    run_experiment_on(config, &train, &test, &mut |_| {})
}

/// Train and evaluate on already-loaded data. `on_epoch` sees each epoch's
/// metrics as soon as they are computed.
pub fn run_experiment_on(
    config: &ExperimentConfig,
    train_full: &Dataset,
    test: &Dataset,
    on_epoch: &mut dyn FnMut(&EpochMetrics),
) -> Result<RunRecord> {
    config.validate()?;
    let started = Instant::now();
    let pool = match config.train_subset {
        Some(n) if n > train_full.len() => {
            return Err(Error::InvalidConfig(format!(
                "train_subset {n} exceeds the {} available training examples",
                train_full.len()
            )))
        }
        Some(n) => train_full.take(n),
        None => train_full.clone(),
    };
    let (train, val) = data::split(
        &pool,
        SplitSpec {
            val_fraction: config.val_fraction,
            seed: config.seed,
        },
    )?;
    drop(pool);

    let mut model = nn::build_alexnet::<f32>(
        config.dataset.input_shape(),
        config.conv_activation,
        config.dense_activation,
        train.num_classes,
        config.seed,
    )?;
    let shapes: Vec<&[usize]> = model.params().iter().map(|p| p.value.dims()).collect();
    let mut optimizer = OptimizerState::new(config.optimizer, &shapes)?;
    let mut dropout_rng = Rng::derive(config.seed, 1);

    let (initial_train_loss, _) = evaluate(&mut model, &train)?;
    let mut history = Vec::with_capacity(config.epochs);
    for epoch in 1..=config.epochs {
        model.set_mode(Mode::Train);
        let shuffle = Rng::derive(config.seed, 1000 + epoch as u64).next_u64();
        let (mut loss_sum, mut correct) = (0.0f64, 0.0f64);
        for (step, (x, y)) in data::batches(&train, config.batch_size, Some(shuffle)).enumerate() {
            let (loss, acc) = train_step(&mut model, &mut optimizer, &x, &y, config.grad_clip, &mut dropout_rng)
                .map_err(|e| match e {
                    Error::DivergedRun { loss, .. } => Error::DivergedRun {
                        epoch,
                        step: step + 1,
                        loss,
                    },
                    other => other,
                })?;
            loss_sum += loss * y.len() as f64;
            correct += acc * y.len() as f64;
        }
        let (val_loss, val_accuracy) = evaluate(&mut model, &val)?;
        let metrics = EpochMetrics {
            epoch,
            train_loss: loss_sum / train.len() as f64,
            train_accuracy: correct / train.len() as f64,
            val_loss,
            val_accuracy,
        };
        on_epoch(&metrics);
        history.push(metrics);
    }
    let (test_loss, test_accuracy) = evaluate(&mut model, test)?;

    let record = RunRecord {
        library_version: LIBRARY_VERSION.to_string(),
        config: config.clone(),
        num_parameters: model.num_parameters(),
        train_examples: train.len(),
        val_examples: val.len(),
        test_examples: test.len(),
        initial_train_loss,
        history,
        test_accuracy,
        test_loss,
        wall_clock_seconds: started.elapsed().as_secs_f64(),
    };
    record.check_invariants()?;
    Ok(record)
}

/// One optimizer update. Returns the batch loss and batch accuracy.
fn train_step(
    model: &mut Model<f32>,
    optimizer: &mut OptimizerState<f32>,
    x: &Tensor<f32>,
    y: &[usize],
    grad_clip: Option<f64>,
    rng: &mut Rng,
) -> Result<(f64, f64)> {
    let mut tape = Tape::new();
    let fwd = model.forward(&mut tape, x, rng).map_err(non_finite_as_diverged)?;
    let acc = nn::accuracy(tape.value(fwd.logits), y)?;
    let (loss_node, _) = nn::softmax_xent(&mut tape, fwd.logits, y)?;
    let loss = tape.value(loss_node).item()? as f64;
    let diverged = |loss| Error::DivergedRun { epoch: 0, step: 0, loss };
    if !loss.is_finite() {
        return Err(diverged(loss));
    }
    let mut grads_by_node = tape.backward(loss_node)?;
    drop(tape);
    let mut grads: Vec<Tensor<f32>> = fwd
        .param_nodes
        .iter()
        .map(|id| grads_by_node.remove(id).expect("every parameter receives a gradient"))
        .collect();
    if let Some(max_norm) = grad_clip {
        clip_grad_norm(&mut grads, max_norm);
    }
    let mut params: Vec<&mut Tensor<f32>> = model.params_mut().iter_mut().map(|p| &mut p.value).collect();
    optimizer.step(&mut params, &grads).map_err(|e| match e {
        Error::NonFiniteGradient(_) => diverged(loss),
        other => other,
    })?;
    Ok((loss, acc))
}

/// Weights that have blown up surface as non-finite activation inputs.
fn non_finite_as_diverged(e: Error) -> Error {
    match e {
        Error::NonFiniteInput(_) => Error::DivergedRun {
            epoch: 0,
            step: 0,
            loss: f64::NAN,
        },
        other => other,
    }
}

/// Mean loss and accuracy over `ds` in eval mode. Restores the previous
/// mode.
pub fn evaluate(model: &mut Model<f32>, ds: &Dataset) -> Result<(f64, f64)> {
    let previous = model.mode();
    model.set_mode(Mode::Eval);
    let mut rng = Rng::new(0);
    let (mut loss_sum, mut correct) = (0.0f64, 0.0f64);
    for (x, y) in data::batches(ds, EVAL_CHUNK, None) {
        let logits = model.predict(&x, &mut rng).map_err(non_finite_as_diverged)?;
        let mut tape = Tape::new();
        let l = tape.constant(logits);
        let (_, per_example) = nn::softmax_xent(&mut tape, l, &y)?;
        loss_sum += per_example.iter().map(|&v| v as f64).sum::<f64>();
        correct += nn::accuracy(tape.value(l), &y)? * y.len() as f64;
    }
    model.set_mode(previous);
    if !loss_sum.is_finite() {
        return Err(Error::DivergedRun {
            epoch: 0,
            step: 0,
            loss: loss_sum,
        });
    }
    let n = ds.len().max(1) as f64;
    Ok((loss_sum / n, correct / n))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct XorSolution {
    pub kind: ActivationKind,
    pub w1: f64,
    pub w2: f64,
    pub b: f64,
    pub theta: f64,
    /// Points classified correctly, out of 4.
    pub correct: usize,
    pub accuracy: f64,
    /// Smallest distance between a neuron output and `theta`.
    pub margin: f64,
}

const XOR_POINTS: [([f64; 2], bool); 4] = [([0.0, 0.0], false), ([0.0, 1.0], true), ([1.0, 0.0], true), ([1.0, 1.0], false)];

fn neuron(kind: ActivationKind, z: f64) -> f64 {
    match kind {
        ActivationKind::Relu => activations::relu(z),
        ActivationKind::Prelu => activations::prelu(z, PRELU_INIT_ALPHA),
        ActivationKind::Mish => activations::mish(z),
        ActivationKind::Gcu => activations::gcu(z),
    }
}

/// Best readout `(correct, margin, theta)` for fixed weights, with class 1
/// iff `y > theta`. Candidate thresholds are the midpoints between sorted
/// outputs plus one value below and above all of them.
fn best_threshold(kind: ActivationKind, w: [f64; 3]) -> (usize, f64, f64) {
    let ys: Vec<f64> = XOR_POINTS
        .iter()
        .map(|(x, _)| neuron(kind, w[0] * x[0] + w[1] * x[1] + w[2]))
        .collect();
    let mut sorted = ys.clone();
    sorted.sort_by(f64::total_cmp);
    let mut candidates = vec![sorted[0] - 1.0, sorted[3] + 1.0];
    candidates.extend(sorted.windows(2).map(|p| 0.5 * (p[0] + p[1])));
    let mut best = (0, f64::NEG_INFINITY, 0.0);
    for theta in candidates {
        let correct = ys
            .iter()
            .zip(&XOR_POINTS)
            .filter(|(&y, (_, label))| (y > theta) == *label)
            .count();
        let margin = ys.iter().map(|y| (y - theta).abs()).fold(f64::INFINITY, f64::min);
        if (correct, margin) > (best.0, best.1) {
            best = (correct, margin, theta);
        }
    }
    best
}

/// Search `y = f(w1·x1 + w2·x2 + b)` with a threshold readout for the best
/// fit to XOR: a grid over `[-2π, 2π]³` in steps of `π/8`, then a shrinking
/// pattern search around the grid winner that keeps accuracy and widens the
/// margin.
pub fn solve_xor_single_neuron(kind: ActivationKind) -> XorSolution {
    use std::f64::consts::PI;
    let axis: Vec<f64> = (0..=32).map(|k| -2.0 * PI + k as f64 * PI / 8.0).collect();
    let mut best_w = [0.0; 3];
    let mut best = (0, f64::NEG_INFINITY, 0.0);
    for &w1 in &axis {
        for &w2 in &axis {
            for &b in &axis {
                let r = best_threshold(kind, [w1, w2, b]);
                if (r.0, r.1) > (best.0, best.1) {
                    best = r;
                    best_w = [w1, w2, b];
                }
            }
        }
    }
    let mut step = PI / 16.0;
    while step > 1e-6 {
        let mut improved = false;
        for i in 0..3 {
            for dir in [-1.0, 1.0] {
                let mut w = best_w;
                w[i] += dir * step;
                let r = best_threshold(kind, w);
                if (r.0, r.1) > (best.0, best.1) {
                    best = r;
                    best_w = w;
                    improved = true;
                }
            }
        }
        if !improved {
            step *= 0.5;
        }
    }
    XorSolution {
        kind,
        w1: best_w[0],
        w2: best_w[1],
        b: best_w[2],
        theta: best.2,
        correct: best.0,
        accuracy: best.0 as f64 / 4.0,
        margin: best.1,
    }
}

/// Highest XOR accuracy over the coarse grid alone.
pub fn xor_grid_best_accuracy(kind: ActivationKind) -> f64 {
    use std::f64::consts::PI;
    let axis: Vec<f64> = (0..=32).map(|k| -2.0 * PI + k as f64 * PI / 8.0).collect();
    let mut best = 0;
    for &w1 in &axis {
        for &w2 in &axis {
            for &b in &axis {
                best = best.max(best_threshold(kind, [w1, w2, b]).0);
            }
        }
    }
    best as f64 / 4.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Markdown,
    Csv,
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "markdown" | "md" => Ok(Self::Markdown),
            "csv" => Ok(Self::Csv),
            other => Err(Error::InvalidConfig(format!("unknown report format {other:?}"))),
        }
    }
}

pub const REPORT_COLUMNS: [&str; 7] = [
    "Architecture",
    "Convolutional Layer",
    "Activation Dense Layer",
    "Validation Accuracy",
    "Test Accuracy",
    "Val Loss",
    "Loss",
];

fn report_row(r: &RunRecord) -> [String; 7] {
    let last = r.last_epoch();
    [
        ARCHITECTURE.to_string(),
        r.config.conv_activation.display_name().to_string(),
        r.config.dense_activation.display_name().to_string(),
        format!("{:.4}", last.val_accuracy),
        format!("{:.4}", r.test_accuracy),
        format!("{:.4}", last.val_loss),
        format!("{:.4}", last.train_loss),
    ]
}

/// One row per record: final-epoch validation accuracy and loss, test
/// accuracy, and final-epoch training loss.
pub fn emit_report(records: &[RunRecord], format: ReportFormat) -> Result<String> {
    if records.is_empty() {
        return Err(Error::Report("no records to report".into()));
    }
    if let Some(r) = records.iter().find(|r| r.history.is_empty()) {
        return Err(Error::Report(format!(
            "record for {}/{} has an empty history",
            r.config.conv_activation, r.config.dense_activation
        )));
    }
    match format {
        ReportFormat::Markdown => {
            let mut out = format!("| {} |\n", REPORT_COLUMNS.join(" | "));
            out += &format!("|{}\n", "---|".repeat(REPORT_COLUMNS.len()));
            for r in records {
                out += &format!("| {} |\n", report_row(r).join(" | "));
            }
            Ok(out)
        }
        ReportFormat::Csv => {
            let mut w = csv::WriterBuilder::new()
                .terminator(csv::Terminator::CRLF)
                .from_writer(Vec::new());
            w.write_record(REPORT_COLUMNS)?;
            for r in records {
                w.write_record(report_row(r))?;
            }
            let bytes = w
                .into_inner()
                .map_err(|e| Error::Report(format!("csv buffer: {e}")))?;
            String::from_utf8(bytes).map_err(|e| Error::Report(e.to_string()))
        }
    }
}
