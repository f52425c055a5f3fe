//! Small differentiable classifiers with hand-derived backpropagation.
//!
//! Two architectures are enough to give the detector an "architecturally
//! different" auxiliary model: a linear softmax classifier and an MLP with
//! relu or tanh hidden layers. Models expose a forward pass onto the
//! probability simplex and the analytic gradient of the cross-entropy loss
//! with respect to the *input*, which is what gradient-based attacks consume.
//! Training is plain mini-batch SGD with weight decay; in adversarial mode
//! every batch is replaced by PGD examples crafted against the current
//! weights before the gradient step.

use serde::{Deserialize, Serialize};

use crate::attacks::{self, AttackConfig};
use crate::datasets::Dataset;
use crate::error::{Error, Result};
use crate::rng;
use rand::seq::SliceRandom;
use rand::Rng;

/// |sum(p) - 1| tolerance for accepting a confidence vector. Loose enough to
/// absorb float32 softmax output from external frameworks.
pub const SIMPLEX_SUM_TOLERANCE: f64 = 1e-6;

/// Entries below this are rejected; entries in [-1e-9, 0) are clamped to 0.
pub const SIMPLEX_ENTRY_TOLERANCE: f64 = 1e-9;

/// A probability vector over `k ≥ 2` classes.
///
/// Construction validates the simplex invariants: entries in `[0, 1]` within
/// [`SIMPLEX_ENTRY_TOLERANCE`] (tiny negatives are clamped to exact zero) and
/// the sum within [`SIMPLEX_SUM_TOLERANCE`] of 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ConfidenceVector(Vec<f64>);

impl TryFrom<Vec<f64>> for ConfidenceVector {
    type Error = Error;

    fn try_from(p: Vec<f64>) -> Result<Self> {
        ConfidenceVector::new(p)
    }
}

impl From<ConfidenceVector> for Vec<f64> {
    fn from(p: ConfidenceVector) -> Vec<f64> {
        p.0
    }
}

impl ConfidenceVector {
    pub fn new(p: Vec<f64>) -> Result<Self> {
        if p.len() < 2 {
            return Err(Error::Validation(format!(
                "confidence vector needs at least 2 classes, got {}",
                p.len()
            )));
        }
        let mut clamped = p;
        let mut sum = 0.0;
        for (i, v) in clamped.iter_mut().enumerate() {
            if !v.is_finite() {
                return Err(Error::Validation(format!("entry {i} is not finite: {v}")));
            }
            if *v < -SIMPLEX_ENTRY_TOLERANCE {
                return Err(Error::Validation(format!("entry {i} is negative: {v}")));
            }
            if *v > 1.0 + SIMPLEX_ENTRY_TOLERANCE {
                return Err(Error::Validation(format!("entry {i} exceeds 1: {v}")));
            }
            if *v < 0.0 {
                *v = 0.0;
            } else if *v > 1.0 {
                *v = 1.0;
            }
            sum += *v;
        }
        if (sum - 1.0).abs() > SIMPLEX_SUM_TOLERANCE {
            return Err(Error::Validation(format!(
                "confidence vector sums to {sum}, not 1"
            )));
        }
        Ok(ConfidenceVector(clamped))
    }

    pub fn k(&self) -> usize {
        self.0.len()
    }

    pub fn get(&self, class: usize) -> f64 {
        self.0[class]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

/// Index of the largest entry, ties broken by lowest index.
pub(crate) fn argmax_lowest_tie(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
        }
    }

    // Derivative as a function of the pre-activation. relu'(0) = 0.
    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => {
                let t = z.tanh();
                1.0 - t * t
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ArchKind {
    Linear,
    Mlp,
}

/// Classifier shape: `layer_widths[0]` is the input dimension, the last width
/// is the class count. Linear models have no hidden layer; MLPs have at least
/// one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub kind: ArchKind,
    pub layer_widths: Vec<usize>,
    pub activation: Activation,
}

impl Architecture {
    pub fn linear(input_dim: usize, classes: usize) -> Self {
        Architecture {
            kind: ArchKind::Linear,
            layer_widths: vec![input_dim, classes],
            activation: Activation::Relu,
        }
    }

    pub fn mlp(input_dim: usize, hidden: &[usize], classes: usize, activation: Activation) -> Self {
        let mut widths = Vec::with_capacity(hidden.len() + 2);
        widths.push(input_dim);
        widths.extend_from_slice(hidden);
        widths.push(classes);
        Architecture {
            kind: ArchKind::Mlp,
            layer_widths: widths,
            activation,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layer_widths[0]
    }

    pub fn classes(&self) -> usize {
        *self.layer_widths.last().expect("widths are non-empty")
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_widths.len() < 2 {
            return Err(Error::InvalidParameter(
                "architecture needs input and output widths".into(),
            ));
        }
        if self.layer_widths.iter().any(|&w| w == 0) {
            return Err(Error::InvalidParameter("zero-width layer".into()));
        }
        if self.classes() < 2 {
            return Err(Error::InvalidParameter(
                "classifier needs at least 2 classes".into(),
            ));
        }
        match self.kind {
            ArchKind::Linear if self.layer_widths.len() != 2 => Err(Error::InvalidParameter(
                "linear architecture must have exactly [input, classes] widths".into(),
            )),
            ArchKind::Mlp if self.layer_widths.len() < 3 => Err(Error::InvalidParameter(
                "mlp architecture needs at least one hidden layer".into(),
            )),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrainingMode {
    Natural,
    Adversarial,
}

/// One affine layer; `weights` is row-major with shape `(out_dim, in_dim)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Layer {
    fn out_dim(&self) -> usize {
        self.bias.len()
    }

    fn in_dim(&self) -> usize {
        self.weights.len() / self.bias.len()
    }

    fn affine(&self, input: &[f64], out: &mut Vec<f64>) {
        out.clear();
        let in_dim = self.in_dim();
        for row in 0..self.out_dim() {
            let mut acc = self.bias[row];
            let w = &self.weights[row * in_dim..(row + 1) * in_dim];
            for (wi, xi) in w.iter().zip(input) {
                acc += wi * xi;
            }
            out.push(acc);
        }
    }

    // out = Wᵀ v, length in_dim.
    fn transpose_mul(&self, v: &[f64]) -> Vec<f64> {
        let in_dim = self.in_dim();
        let mut out = vec![0.0; in_dim];
        for (row, &vr) in v.iter().enumerate() {
            let w = &self.weights[row * in_dim..(row + 1) * in_dim];
            for (acc, wi) in out.iter_mut().zip(w) {
                *acc += wi * vr;
            }
        }
        out
    }
}

/// A trained classifier: architecture plus per-layer weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub arch: Architecture,
    pub layers: Vec<Layer>,
    pub training_mode: TrainingMode,
    pub seed: u64,
}

/// Which direction of the cross-entropy loss the caller wants to move in.
/// `Maximize` returns ∂CE/∂x as-is (gradient ascent on the loss); `Minimize`
/// returns its negation, for targeted descent toward the label.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradSign {
    Maximize,
    Minimize,
}

/// Numerically stabilized exp-normalization of `logits` onto the simplex.
pub fn softmax(logits: &[f64]) -> Result<ConfidenceVector> {
    if logits.len() < 2 {
        return Err(Error::InvalidParameter(format!(
            "softmax needs at least 2 logits, got {}",
            logits.len()
        )));
    }
    if let Some(bad) = logits.iter().find(|v| !v.is_finite()) {
        return Err(Error::Numeric(format!("non-finite logit: {bad}")));
    }
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    ConfidenceVector::new(exps.into_iter().map(|e| e / sum).collect())
}

/// log Σ exp(z), stabilized. Cross-entropy is computed from logits as
/// `lse(z) - z[label]`, never as `-ln softmax(z)[label]`.
fn log_sum_exp(logits: &[f64]) -> f64 {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = logits.iter().map(|&z| (z - max).exp()).sum();
    max + sum.ln()
}

struct ForwardTrace {
    /// a_0 = input, a_l = activation output of hidden layer l.
    activations: Vec<Vec<f64>>,
    /// z_l = pre-activation of layer l (last entry: output logits).
    pre_activations: Vec<Vec<f64>>,
}

struct LayerGrads {
    weights: Vec<f64>,
    bias: Vec<f64>,
}

impl Model {
    pub fn input_dim(&self) -> usize {
        self.arch.input_dim()
    }

    pub fn classes(&self) -> usize {
        self.arch.classes()
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::InvalidParameter(format!(
                "input has dimension {}, model expects {}",
                x.len(),
                self.input_dim()
            )));
        }
        Ok(())
    }

    fn check_label(&self, label: usize) -> Result<()> {
        if label >= self.classes() {
            return Err(Error::InvalidParameter(format!(
                "label {label} out of range for {} classes",
                self.classes()
            )));
        }
        Ok(())
    }

    fn trace(&self, x: &[f64]) -> ForwardTrace {
        let hidden_layers = self.layers.len() - 1;
        let mut activations = Vec::with_capacity(hidden_layers + 1);
        let mut pre_activations = Vec::with_capacity(self.layers.len());
        activations.push(x.to_vec());
        let mut buf = Vec::new();
        for (l, layer) in self.layers.iter().enumerate() {
            layer.affine(activations.last().expect("seeded with input"), &mut buf);
            pre_activations.push(buf.clone());
            if l < hidden_layers {
                activations.push(buf.iter().map(|&z| self.arch.activation.apply(z)).collect());
            }
        }
        ForwardTrace {
            activations,
            pre_activations,
        }
    }

    /// Logits for `x` (pre-softmax output of the last layer).
    pub fn logits(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let trace = self.trace(x);
        Ok(trace.pre_activations.into_iter().last().expect("at least one layer"))
    }

    /// Forward pass onto the probability simplex. Pure in (weights, x).
    pub fn forward(&self, x: &[f64]) -> Result<ConfidenceVector> {
        softmax(&self.logits(x)?)
    }

    pub fn predict(&self, x: &[f64]) -> Result<usize> {
        Ok(argmax_lowest_tie(&self.logits(x)?))
    }

    /// Cross-entropy of the model output against `label`, via log-sum-exp.
    pub fn cross_entropy(&self, x: &[f64], label: usize) -> Result<f64> {
        self.check_label(label)?;
        let logits = self.logits(x)?;
        Ok(log_sum_exp(&logits) - logits[label])
    }

    /// Analytic ∂CE(forward(x), label)/∂x, negated for [`GradSign::Minimize`].
    pub fn input_gradient(&self, x: &[f64], label: usize, sign: GradSign) -> Result<Vec<f64>> {
        self.check_input(x)?;
        self.check_label(label)?;
        let trace = self.trace(x);
        let delta = self.output_delta(&trace, label)?;
        let mut grad = self.backprop_to_input(&trace, delta);
        if sign == GradSign::Minimize {
            for g in &mut grad {
                *g = -*g;
            }
        }
        Ok(grad)
    }

    // δ_L = softmax(z_L) − onehot(label)
    fn output_delta(&self, trace: &ForwardTrace, label: usize) -> Result<Vec<f64>> {
        let logits = trace.pre_activations.last().expect("at least one layer");
        let probs = softmax(logits)?;
        let mut delta = probs.into_vec();
        delta[label] -= 1.0;
        Ok(delta)
    }

    fn backprop_to_input(&self, trace: &ForwardTrace, mut delta: Vec<f64>) -> Vec<f64> {
        for l in (0..self.layers.len()).rev() {
            let upstream = self.layers[l].transpose_mul(&delta);
            if l == 0 {
                return upstream;
            }
            let z = &trace.pre_activations[l - 1];
            delta = upstream
                .iter()
                .zip(z)
                .map(|(&u, &zi)| u * self.arch.activation.derivative(zi))
                .collect();
        }
        unreachable!("models always have at least one layer")
    }

    // Per-sample weight/bias gradients of CE, accumulated into `grads`.
    fn accumulate_grads(&self, x: &[f64], label: usize, grads: &mut [LayerGrads]) -> Result<()> {
        let trace = self.trace(x);
        let mut delta = self.output_delta(&trace, label)?;
        for l in (0..self.layers.len()).rev() {
            let input = &trace.activations[l];
            let in_dim = input.len();
            let g = &mut grads[l];
            for (row, &dr) in delta.iter().enumerate() {
                g.bias[row] += dr;
                let w = &mut g.weights[row * in_dim..(row + 1) * in_dim];
                for (wg, xi) in w.iter_mut().zip(input) {
                    *wg += dr * xi;
                }
            }
            if l > 0 {
                let upstream = self.layers[l].transpose_mul(&delta);
                let z = &trace.pre_activations[l - 1];
                delta = upstream
                    .iter()
                    .zip(z)
                    .map(|(&u, &zi)| u * self.arch.activation.derivative(zi))
                    .collect();
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub seed: u64,
    /// Inner-maximization attack for adversarial training. When set, every
    /// batch is replaced by PGD examples against the current weights.
    pub adversarial: Option<AttackConfig>,
}

impl TrainConfig {
    pub fn new(epochs: usize, batch_size: usize, learning_rate: f64, seed: u64) -> Self {
        TrainConfig {
            epochs,
            batch_size,
            learning_rate,
            weight_decay: 0.0,
            seed,
            adversarial: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs < 1 {
            return Err(Error::InvalidParameter("epochs must be >= 1".into()));
        }
        if self.batch_size < 1 {
            return Err(Error::InvalidParameter("batch_size must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::InvalidParameter("learning_rate must be > 0".into()));
        }
        if self.weight_decay < 0.0 {
            return Err(Error::InvalidParameter("weight_decay must be >= 0".into()));
        }
        Ok(())
    }
}

/// Mini-batch SGD with weight decay on cross-entropy. Deterministic given
/// `cfg.seed`: weight init and shuffling draw from fixed named streams.
pub fn train(arch: &Architecture, train_set: &Dataset, cfg: &TrainConfig) -> Result<Model> {
    arch.validate()?;
    cfg.validate()?;
    if train_set.examples.is_empty() {
        return Err(Error::InvalidParameter("empty training set".into()));
    }
    if train_set.d != arch.input_dim() {
        return Err(Error::InvalidParameter(format!(
            "dataset dimension {} does not match architecture input {}",
            train_set.d,
            arch.input_dim()
        )));
    }
    if train_set.k != arch.classes() {
        return Err(Error::InvalidParameter(format!(
            "dataset has {} classes, architecture outputs {}",
            train_set.k,
            arch.classes()
        )));
    }

    let mut model = init_model(arch, cfg.seed);
    model.training_mode = if cfg.adversarial.is_some() {
        TrainingMode::Adversarial
    } else {
        TrainingMode::Natural
    };

    let n = train_set.examples.len();
    let mut order: Vec<usize> = (0..n).collect();
    let mut shuffle_rng = rng::stream(cfg.seed, "train/shuffle");

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        for batch in order.chunks(cfg.batch_size) {
            let mut grads: Vec<LayerGrads> = model
                .layers
                .iter()
                .map(|l| LayerGrads {
                    weights: vec![0.0; l.weights.len()],
                    bias: vec![0.0; l.bias.len()],
                })
                .collect();
            for &idx in batch {
                let example = &train_set.examples[idx];
                match &cfg.adversarial {
                    None => model.accumulate_grads(&example.x, example.y, &mut grads)?,
                    Some(attack) => {
                        let mut inner = attack.clone();
                        inner.seed =
                            rng::derive_seed(cfg.seed, &format!("train/attack/{epoch}/{idx}"));
                        let pair = attacks::pgd(&model, &example.x, example.y, &inner)?;
                        model.accumulate_grads(&pair.x_adv, example.y, &mut grads)?;
                    }
                }
            }
            let scale = 1.0 / batch.len() as f64;
            for (layer, grad) in model.layers.iter_mut().zip(&grads) {
                for (w, g) in layer.weights.iter_mut().zip(&grad.weights) {
                    *w -= cfg.learning_rate * (g * scale + cfg.weight_decay * *w);
                }
                for (b, g) in layer.bias.iter_mut().zip(&grad.bias) {
                    *b -= cfg.learning_rate * g * scale;
                }
            }
        }
    }
    model.seed = cfg.seed;
    Ok(model)
}

// Per-layer uniform init in [-1/sqrt(fan_in), +1/sqrt(fan_in)].
fn init_model(arch: &Architecture, seed: u64) -> Model {
    let mut init_rng = rng::stream(seed, "train/init");
    let mut layers = Vec::with_capacity(arch.layer_widths.len() - 1);
    for pair in arch.layer_widths.windows(2) {
        let (fan_in, fan_out) = (pair[0], pair[1]);
        let bound = 1.0 / (fan_in as f64).sqrt();
        let weights = (0..fan_in * fan_out)
            .map(|_| init_rng.gen_range(-bound..=bound))
            .collect();
        let bias = vec![0.0; fan_out];
        layers.push(Layer { weights, bias });
    }
    Model {
        arch: arch.clone(),
        layers,
        training_mode: TrainingMode::Natural,
        seed,
    }
}

/// Fraction of examples whose predicted label matches the ground truth.
pub fn evaluate_accuracy(model: &Model, ds: &Dataset) -> Result<f64> {
    if ds.examples.is_empty() {
        return Err(Error::InvalidParameter("empty dataset".into()));
    }
    if ds.d != model.input_dim() {
        return Err(Error::InvalidParameter(format!(
            "dataset dimension {} does not match model input {}",
            ds.d,
            model.input_dim()
        )));
    }
    let mut correct = 0usize;
    for example in &ds.examples {
        if model.predict(&example.x)? == example.y {
            correct += 1;
        }
    }
    Ok(correct as f64 / ds.examples.len() as f64)
}

/// Outcome of comparing an analytic gradient against central differences.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub pass: bool,
}

/// Coordinate-wise relative-error comparison of two gradients; denominator
/// `max(|a|, |b|, 1e-8)`.
pub fn compare_gradients(analytic: &[f64], numeric: &[f64], tol: f64) -> GradCheckReport {
    let max_rel_error = analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &b)| (a - b).abs() / a.abs().max(b.abs()).max(1e-8))
        .fold(0.0, f64::max);
    GradCheckReport {
        max_rel_error,
        pass: max_rel_error <= tol,
    }
}

/// Check the analytic input gradient against central finite differences of
/// the cross-entropy loss.
pub fn finite_diff_check(
    model: &Model,
    x: &[f64],
    label: usize,
    h: f64,
    tol: f64,
) -> Result<GradCheckReport> {
    if !(h > 0.0) {
        return Err(Error::InvalidParameter("h must be > 0".into()));
    }
    if !(tol > 0.0) {
        return Err(Error::InvalidParameter("tol must be > 0".into()));
    }
    let analytic = model.input_gradient(x, label, GradSign::Maximize)?;
    let mut numeric = Vec::with_capacity(x.len());
    let mut probe = x.to_vec();
    for i in 0..x.len() {
        probe[i] = x[i] + h;
        let plus = model.cross_entropy(&probe, label)?;
        probe[i] = x[i] - h;
        let minus = model.cross_entropy(&probe, label)?;
        probe[i] = x[i];
        numeric.push((plus - minus) / (2.0 * h));
    }
    Ok(compare_gradients(&analytic, &numeric, tol))
}

const MODEL_FORMAT_VERSION: &str = "pid-model/1";

#[derive(Serialize, Deserialize)]
struct ModelFile {
    version: String,
    model: Model,
}

/// Write a model to `path` in the versioned toolkit format.
pub fn save_model(path: &std::path::Path, model: &Model) -> Result<()> {
    let file = ModelFile {
        version: MODEL_FORMAT_VERSION.to_string(),
        model: model.clone(),
    };
    let body = serde_json::to_string_pretty(&file)
        .map_err(|e| Error::Numeric(format!("model serialization failed: {e}")))?;
    std::fs::write(path, body + "\n")?;
    Ok(())
}

pub fn load_model(path: &std::path::Path) -> Result<Model> {
    let body = std::fs::read_to_string(path)?;
    let file: ModelFile = serde_json::from_str(&body).map_err(|e| Error::Parse {
        line: e.line(),
        message: e.to_string(),
    })?;
    if file.version != MODEL_FORMAT_VERSION {
        return Err(Error::Validation(format!(
            "unsupported model format version '{}'",
            file.version
        )));
    }
    file.model.arch.validate()?;
    Ok(file.model)
}
