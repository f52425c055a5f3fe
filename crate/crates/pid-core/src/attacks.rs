//! Adversarial example generation under an ℓ∞ budget.
//!
//! All attacks emit an [`AdversarialPair`] whose perturbed input stays inside
//! both the ε-ball around the clean input and the `[0,1]` feature box; the
//! projection applies the ε-ball clamp first, then the box clamp, at every
//! step. FGSM is the one-step special case of PGD and shares its code path,
//! so `pgd(iterations=1, random_init=false, step=ε)` is bit-identical to
//! `fgsm`. The adaptive attack runs the same PGD loop against a joint loss
//! over the primal and auxiliary models, so `λ = 0` reduces bit-identically
//! to targeted PGD against the primal alone.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{argmax_lowest_tie, ConfidenceVector, GradSign, Model};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Norm {
    Linf,
}

/// Shared parameterization of every attack in the module. Fields irrelevant
/// to a given attack (e.g. `query_budget` for PGD) are ignored by it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackConfig {
    /// ℓ∞ budget in feature units.
    pub epsilon: f64,
    pub step_size: f64,
    pub iterations: usize,
    pub random_init: bool,
    pub norm: Norm,
    /// Target class for targeted PGD; must differ from the true label.
    pub targeted: Option<usize>,
    /// Trade-off weight on the auxiliary loss in the adaptive attack.
    pub lambda: f64,
    /// Forward-call budget for the black-box random search.
    pub query_budget: usize,
    pub seed: u64,
}

impl Default for AttackConfig {
    fn default() -> Self {
        AttackConfig {
            epsilon: 0.1,
            step_size: 0.025,
            iterations: 10,
            random_init: true,
            norm: Norm::Linf,
            targeted: None,
            lambda: 1.0,
            query_budget: 1000,
            seed: 0,
        }
    }
}

impl AttackConfig {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon >= 0.0) || !self.epsilon.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "epsilon must be finite and >= 0, got {}",
                self.epsilon
            )));
        }
        if self.iterations > 0 && !(self.step_size > 0.0) {
            return Err(Error::InvalidParameter(
                "step_size must be > 0 when iterations > 0".into(),
            ));
        }
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "lambda must be finite and >= 0, got {}",
                self.lambda
            )));
        }
        Ok(())
    }
}

/// A clean input, its perturbed counterpart, and whether the attack fooled
/// the attacked model (for the joint adaptive attack: fooled both models into
/// the target class).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdversarialPair {
    pub x_clean: Vec<f64>,
    pub x_adv: Vec<f64>,
    pub y_true: usize,
    pub succeeded: bool,
}

/// Attack families the benchmark harness can dispatch on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackKind {
    Fgsm,
    Pgd,
    RandomSearch,
    Adaptive,
}

impl std::fmt::Display for AttackKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            AttackKind::Fgsm => write!(f, "fgsm"),
            AttackKind::Pgd => write!(f, "pgd"),
            AttackKind::RandomSearch => write!(f, "random_search"),
            AttackKind::Adaptive => write!(f, "adaptive"),
        }
    }
}

/// Score-only access to a classifier: what a black-box attacker sees.
pub trait ScoreOracle {
    fn class_count(&self) -> usize;
    fn input_dim(&self) -> usize;
    fn scores(&self, x: &[f64]) -> Result<ConfidenceVector>;
}

impl ScoreOracle for Model {
    fn class_count(&self) -> usize {
        self.classes()
    }

    fn input_dim(&self) -> usize {
        Model::input_dim(self)
    }

    fn scores(&self, x: &[f64]) -> Result<ConfidenceVector> {
        self.forward(x)
    }
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn check_clean_input(x: &[f64], dim: usize) -> Result<()> {
    if x.len() != dim {
        return Err(Error::InvalidParameter(format!(
            "input has dimension {}, model expects {dim}",
            x.len()
        )));
    }
    if let Some(bad) = x.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::InvalidParameter(format!(
            "clean input coordinate {bad} outside [0,1]"
        )));
    }
    Ok(())
}

// ε-ball clamp around x0 first, then [0,1] box clamp.
fn project(x0: &[f64], epsilon: f64, x: &mut [f64]) {
    for (xi, &ci) in x.iter_mut().zip(x0) {
        *xi = xi.clamp(ci - epsilon, ci + epsilon).clamp(0.0, 1.0);
    }
}

// The PGD loop shared by fgsm, pgd and the adaptive attack. `grad` returns
// the direction whose sign the iterate follows (already negated for targeted
// descent).
fn run_pgd<G>(x0: &[f64], cfg: &AttackConfig, grad: G) -> Result<Vec<f64>>
where
    G: Fn(&[f64]) -> Result<Vec<f64>>,
{
    let mut x = x0.to_vec();
    if cfg.random_init && cfg.epsilon > 0.0 {
        let mut init_rng = rng::stream(cfg.seed, "attack/init");
        for (xi, &ci) in x.iter_mut().zip(x0) {
            *xi = ci + init_rng.gen_range(-cfg.epsilon..=cfg.epsilon);
        }
        project(x0, cfg.epsilon, &mut x);
    }
    for _ in 0..cfg.iterations {
        let g = grad(&x)?;
        for (xi, &gi) in x.iter_mut().zip(&g) {
            *xi += cfg.step_size * sign(gi);
        }
        project(x0, cfg.epsilon, &mut x);
    }
    Ok(x)
}

/// Single signed-gradient step: `x_adv = clamp(x + ε · sign(∂CE/∂x))` with
/// `sign(0) = 0`.
pub fn fgsm(model: &Model, x: &[f64], y_true: usize, epsilon: f64) -> Result<AdversarialPair> {
    let cfg = AttackConfig {
        epsilon,
        step_size: epsilon.max(f64::MIN_POSITIVE),
        iterations: 1,
        random_init: false,
        ..AttackConfig::default()
    };
    check_clean_input(x, model.input_dim())?;
    cfg.validate()?;
    let x_adv = run_pgd(x, &cfg, |x| model.input_gradient(x, y_true, GradSign::Maximize))?;
    let succeeded = model.predict(&x_adv)? != y_true;
    Ok(AdversarialPair {
        x_clean: x.to_vec(),
        x_adv,
        y_true,
        succeeded,
    })
}

/// Projected gradient descent: optional random start in the ε-ball, then
/// `iterations` signed-gradient steps, each projected into the ε-ball and the
/// `[0,1]` box. Maximizes cross-entropy at `y_true`, or minimizes it toward
/// `cfg.targeted` when set.
pub fn pgd(model: &Model, x: &[f64], y_true: usize, cfg: &AttackConfig) -> Result<AdversarialPair> {
    check_clean_input(x, model.input_dim())?;
    cfg.validate()?;
    if y_true >= model.classes() {
        return Err(Error::InvalidParameter(format!(
            "label {y_true} out of range for {} classes",
            model.classes()
        )));
    }
    if let Some(t) = cfg.targeted {
        if t == y_true {
            return Err(Error::InvalidParameter(
                "targeted label must differ from the true label".into(),
            ));
        }
        if t >= model.classes() {
            return Err(Error::InvalidParameter(format!(
                "target {t} out of range for {} classes",
                model.classes()
            )));
        }
    }
    let x_adv = match cfg.targeted {
        None => run_pgd(x, cfg, |x| model.input_gradient(x, y_true, GradSign::Maximize))?,
        Some(t) => run_pgd(x, cfg, |x| model.input_gradient(x, t, GradSign::Minimize))?,
    };
    let succeeded = model.predict(&x_adv)? != y_true;
    Ok(AdversarialPair {
        x_clean: x.to_vec(),
        x_adv,
        y_true,
        succeeded,
    })
}

// Margin the black-box search minimizes: confidence on the true label minus
// the best other-class confidence. Negative means misclassified (up to ties).
fn margin(scores: &ConfidenceVector, y_true: usize) -> f64 {
    let best_other = scores
        .as_slice()
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != y_true)
        .map(|(_, &v)| v)
        .fold(f64::NEG_INFINITY, f64::max);
    scores.get(y_true) - best_other
}

/// Score-based black-box attack: proposes random sign patches at the ε
/// boundary and keeps a proposal only if it strictly decreases the margin
/// `f_y(x) − max_{i≠y} f_i(x)`. Uses at most `cfg.query_budget` forward
/// calls and no gradients.
pub fn random_search_attack<O: ScoreOracle + ?Sized>(
    oracle: &O,
    x: &[f64],
    y_true: usize,
    cfg: &AttackConfig,
) -> Result<AdversarialPair> {
    let (pair, _) = random_search_with_margins(oracle, x, y_true, cfg)?;
    Ok(pair)
}

// Also returns the accepted-iterate margin sequence, for tests of the
// acceptance rule.
fn random_search_with_margins<O: ScoreOracle + ?Sized>(
    oracle: &O,
    x: &[f64],
    y_true: usize,
    cfg: &AttackConfig,
) -> Result<(AdversarialPair, Vec<f64>)> {
    check_clean_input(x, oracle.input_dim())?;
    cfg.validate()?;
    if cfg.query_budget < 1 {
        return Err(Error::InvalidParameter("query_budget must be >= 1".into()));
    }
    if y_true >= oracle.class_count() {
        return Err(Error::InvalidParameter(format!(
            "label {y_true} out of range for {} classes",
            oracle.class_count()
        )));
    }

    let d = x.len();
    let mut search_rng = rng::stream(cfg.seed, "attack/search");
    let mut queries = 0usize;

    let evaluate = |probe: &[f64], queries: &mut usize| -> Result<(f64, usize)> {
        let scores = oracle.scores(probe)?;
        *queries += 1;
        Ok((margin(&scores, y_true), argmax_lowest_tie(scores.as_slice())))
    };

    let (mut best_margin, mut best_pred) = evaluate(x, &mut queries)?;
    let mut accepted_margins = vec![best_margin];
    let mut delta = vec![0.0; d];
    let mut best_x = x.to_vec();

    while best_pred == y_true && queries < cfg.query_budget && cfg.epsilon > 0.0 {
        let len = search_rng.gen_range(1..=d);
        let start = search_rng.gen_range(0..=d - len);
        let mut proposal = delta.clone();
        for slot in proposal[start..start + len].iter_mut() {
            *slot = if search_rng.gen_bool(0.5) {
                cfg.epsilon
            } else {
                -cfg.epsilon
            };
        }
        let mut candidate: Vec<f64> = x.iter().zip(&proposal).map(|(xi, di)| xi + di).collect();
        project(x, cfg.epsilon, &mut candidate);
        let (candidate_margin, candidate_pred) = evaluate(&candidate, &mut queries)?;
        if candidate_margin < best_margin {
            best_margin = candidate_margin;
            best_pred = candidate_pred;
            best_x = candidate;
            delta = proposal;
            accepted_margins.push(best_margin);
        }
    }

    let pair = AdversarialPair {
        x_clean: x.to_vec(),
        x_adv: best_x,
        y_true,
        succeeded: best_pred != y_true,
    };
    Ok((pair, accepted_margins))
}

/// Joint adaptive attack against the detector: targeted PGD minimizing
/// `CE(f(x+r), t) + λ·CE(g(x+r), t)`, forcing both models toward the same
/// label `t`. Succeeds when both models predict `t`.
pub fn adaptive_joint_attack(
    primal: &Model,
    auxiliary: &Model,
    x: &[f64],
    y_true: usize,
    target: usize,
    cfg: &AttackConfig,
) -> Result<AdversarialPair> {
    check_clean_input(x, primal.input_dim())?;
    cfg.validate()?;
    if target == y_true {
        return Err(Error::InvalidParameter(
            "adaptive target must differ from the true label".into(),
        ));
    }
    if primal.classes() != auxiliary.classes() {
        return Err(Error::InvalidParameter(format!(
            "primal has {} classes but auxiliary has {}",
            primal.classes(),
            auxiliary.classes()
        )));
    }
    if primal.input_dim() != auxiliary.input_dim() {
        return Err(Error::InvalidParameter(format!(
            "primal expects dimension {} but auxiliary expects {}",
            primal.input_dim(),
            auxiliary.input_dim()
        )));
    }
    if target >= primal.classes() {
        return Err(Error::InvalidParameter(format!(
            "target {target} out of range for {} classes",
            primal.classes()
        )));
    }

    let lambda = cfg.lambda;
    let x_adv = run_pgd(x, cfg, |x| {
        let grad_primal = primal.input_gradient(x, target, GradSign::Minimize)?;
        let grad_auxiliary = auxiliary.input_gradient(x, target, GradSign::Minimize)?;
        Ok(grad_primal
            .iter()
            .zip(&grad_auxiliary)
            .map(|(&p, &a)| p + lambda * a)
            .collect())
    })?;
    let succeeded = primal.predict(&x_adv)? == target && auxiliary.predict(&x_adv)? == target;
    Ok(AdversarialPair {
        x_clean: x.to_vec(),
        x_adv,
        y_true,
        succeeded,
    })
}

/// Per-sample target for the adaptive attack: the second-most-likely class
/// under `scores` (ties by lowest index).
pub fn second_most_likely(scores: &ConfidenceVector) -> usize {
    let values = scores.as_slice();
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].partial_cmp(&values[a]).unwrap().then(a.cmp(&b)));
    order[1]
}

/// Fraction of pairs whose perturbed input the model misclassifies.
pub fn attack_success_rate(model: &Model, pairs: &[AdversarialPair]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::InvalidParameter(
            "attack success rate of an empty list is undefined".into(),
        ));
    }
    let mut fooled = 0usize;
    for pair in pairs {
        if model.predict(&pair.x_adv)? != pair.y_true {
            fooled += 1;
        }
    }
    Ok(fooled as f64 / pairs.len() as f64)
}

/// One serialized attack result: the prediction-record precursor format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdversarialPairRecord {
    pub id: String,
    pub y_true: usize,
    pub x_clean: Vec<f64>,
    pub x_adv: Vec<f64>,
    pub succeeded: bool,
}

impl AdversarialPairRecord {
    pub fn new(id: String, pair: &AdversarialPair) -> Self {
        AdversarialPairRecord {
            id,
            y_true: pair.y_true,
            x_clean: pair.x_clean.clone(),
            x_adv: pair.x_adv.clone(),
            succeeded: pair.succeeded,
        }
    }
}

pub fn write_adversarial_pairs(path: &Path, records: &[AdversarialPairRecord]) -> Result<()> {
    let mut writer = BufWriter::new(File::create(path)?);
    for record in records {
        serde_json::to_writer(&mut writer, record)
            .map_err(|e| Error::Numeric(format!("pair serialization failed: {e}")))?;
        writer.write_all(b"\n")?;
    }
    writer.flush()?;
    Ok(())
}

pub fn load_adversarial_pairs(path: &Path) -> Result<Vec<AdversarialPairRecord>> {
    let reader = BufReader::new(File::open(path)?);
    let mut records = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: AdversarialPairRecord =
            serde_json::from_str(&line).map_err(|e| Error::Parse {
                line: idx + 1,
                message: e.to_string(),
            })?;
        records.push(record);
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::{gen_synthetic, split, DatasetKind};
    use crate::models::{self, Activation, Architecture, Layer, TrainConfig, TrainingMode};
    use std::cell::Cell;

    fn linear_model(weights: Vec<f64>, bias: Vec<f64>, in_dim: usize) -> Model {
        let classes = bias.len();
        Model {
            arch: Architecture::linear(in_dim, classes),
            layers: vec![Layer { weights, bias }],
            training_mode: TrainingMode::Natural,
            seed: 0,
        }
    }

    fn trained_blobs_mlp(seed: u64) -> (Model, crate::datasets::Dataset) {
        let ds = gen_synthetic(DatasetKind::Blobs, 3, 2, 80, 3.0, seed).unwrap();
        let (train_set, _, test_set) = split(&ds, (0.7, 0.1, 0.2), seed).unwrap();
        let arch = Architecture::mlp(2, &[16], 3, Activation::Relu);
        let cfg = TrainConfig::new(40, 16, 0.5, seed);
        let m = models::train(&arch, &train_set, &cfg).unwrap();
        (m, test_set)
    }

    #[test]
    fn fgsm_zero_budget_is_identity() {
        let m = linear_model(vec![0.5, -0.5, -0.5, 0.5], vec![0.0, 0.0], 2);
        let pair = fgsm(&m, &[0.3, 0.7], 0, 0.0).unwrap();
        assert_eq!(pair.x_adv, vec![0.3, 0.7]);
    }

    #[test]
    fn fgsm_fixed_point_at_one_hot_output() {
        // Saturated softmax: gradient is exactly zero, sign(0) = 0.
        let m = linear_model(vec![2000.0, 0.0, -2000.0, 0.0], vec![0.0, 0.0], 2);
        let x = [1.0, 0.25];
        assert_eq!(m.forward(&x).unwrap().as_slice(), &[1.0, 0.0]);
        let pair = fgsm(&m, &x, 0, 0.1).unwrap();
        assert_eq!(pair.x_adv, x.to_vec());
        assert!(!pair.succeeded);
    }

    #[test]
    fn fgsm_matches_closed_form_on_linear_model() {
        let weights = vec![0.8, -0.4, -0.2, 0.6];
        let m = linear_model(weights.clone(), vec![0.0, 0.0], 2);
        let x = [0.4, 0.6];
        let y = 0;
        let eps = 0.05;
        let p = m.forward(&x).unwrap();
        let mut delta = p.into_vec();
        delta[y] -= 1.0;
        let grad = [
            weights[0] * delta[0] + weights[2] * delta[1],
            weights[1] * delta[0] + weights[3] * delta[1],
        ];
        let expected: Vec<f64> = x
            .iter()
            .zip(&grad)
            .map(|(xi, g)| (xi + eps * sign(*g)).clamp(0.0, 1.0))
            .collect();
        let pair = fgsm(&m, &x, y, eps).unwrap();
        assert_eq!(pair.x_adv, expected);
    }

    #[test]
    fn pgd_single_step_reduces_to_fgsm_bitwise() {
        let (m, test_set) = trained_blobs_mlp(1);
        let cfg = AttackConfig {
            epsilon: 0.07,
            step_size: 0.07,
            iterations: 1,
            random_init: false,
            ..AttackConfig::default()
        };
        for ex in test_set.examples.iter().take(20) {
            let a = pgd(&m, &ex.x, ex.y, &cfg).unwrap();
            let b = fgsm(&m, &ex.x, ex.y, 0.07).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn pgd_respects_ball_and_box() {
        let (m, test_set) = trained_blobs_mlp(2);
        let cfg = AttackConfig {
            epsilon: 0.1,
            step_size: 0.03,
            iterations: 8,
            random_init: true,
            seed: 5,
            ..AttackConfig::default()
        };
        for ex in &test_set.examples {
            let pair = pgd(&m, &ex.x, ex.y, &cfg).unwrap();
            for (adv, clean) in pair.x_adv.iter().zip(&pair.x_clean) {
                assert!((adv - clean).abs() <= cfg.epsilon + 1e-9);
                assert!((0.0..=1.0).contains(adv));
            }
        }
    }

    #[test]
    fn pgd_beats_fgsm_on_success_rate() {
        // Curved decision boundaries are where the multi-step attack pays
        // off: the single-step linearization picks a stale corner while PGD
        // re-aims at every step.
        let ds = gen_synthetic(DatasetKind::Rings, 3, 2, 150, 1.0, 3).unwrap();
        let (train_set, _, test_set) = split(&ds, (0.7, 0.1, 0.2), 3).unwrap();
        let arch = Architecture::mlp(2, &[32], 3, Activation::Relu);
        let mut tc = TrainConfig::new(80, 32, 0.5, 3);
        tc.weight_decay = 1e-4;
        let m = models::train(&arch, &train_set, &tc).unwrap();
        let cfg = AttackConfig {
            epsilon: 0.1,
            step_size: 0.025,
            iterations: 10,
            random_init: false,
            ..AttackConfig::default()
        };
        let mut pgd_pairs = Vec::new();
        let mut fgsm_pairs = Vec::new();
        for ex in &test_set.examples {
            pgd_pairs.push(pgd(&m, &ex.x, ex.y, &cfg).unwrap());
            fgsm_pairs.push(fgsm(&m, &ex.x, ex.y, cfg.epsilon).unwrap());
        }
        let pgd_asr = attack_success_rate(&m, &pgd_pairs).unwrap();
        let fgsm_asr = attack_success_rate(&m, &fgsm_pairs).unwrap();
        assert!(
            pgd_asr > fgsm_asr,
            "pgd asr {pgd_asr} not greater than fgsm asr {fgsm_asr}"
        );
    }

    #[test]
    fn pgd_rejects_invalid_config_and_target() {
        let m = linear_model(vec![0.0; 4], vec![0.0, 0.0], 2);
        let bad = AttackConfig {
            step_size: 0.0,
            ..AttackConfig::default()
        };
        assert!(pgd(&m, &[0.5, 0.5], 0, &bad).is_err());
        let self_target = AttackConfig {
            targeted: Some(0),
            ..AttackConfig::default()
        };
        assert!(pgd(&m, &[0.5, 0.5], 0, &self_target).is_err());
        assert!(pgd(&m, &[0.5, 1.5], 0, &AttackConfig::default()).is_err());
    }

    struct CountingOracle<'a> {
        model: &'a Model,
        calls: Cell<usize>,
    }

    impl ScoreOracle for CountingOracle<'_> {
        fn class_count(&self) -> usize {
            self.model.classes()
        }

        fn input_dim(&self) -> usize {
            self.model.input_dim()
        }

        fn scores(&self, x: &[f64]) -> Result<ConfidenceVector> {
            self.calls.set(self.calls.get() + 1);
            self.model.forward(x)
        }
    }

    #[test]
    fn random_search_exits_early_on_misclassified_input() {
        // Model predicts class 0 everywhere; label 1 is already wrong.
        let m = linear_model(vec![10.0, 0.0, -10.0, 0.0], vec![0.0, 0.0], 2);
        let oracle = CountingOracle {
            model: &m,
            calls: Cell::new(0),
        };
        let cfg = AttackConfig {
            query_budget: 1,
            ..AttackConfig::default()
        };
        let pair = random_search_attack(&oracle, &[0.9, 0.5], 1, &cfg).unwrap();
        assert!(pair.succeeded);
        assert_eq!(pair.x_adv, vec![0.9, 0.5]);
        assert_eq!(oracle.calls.get(), 1);
    }

    #[test]
    fn random_search_stays_within_query_budget() {
        let (m, test_set) = trained_blobs_mlp(4);
        for budget in [1usize, 5, 50, 300] {
            let oracle = CountingOracle {
                model: &m,
                calls: Cell::new(0),
            };
            let cfg = AttackConfig {
                epsilon: 0.05,
                query_budget: budget,
                seed: 21,
                ..AttackConfig::default()
            };
            let ex = &test_set.examples[0];
            let pair = random_search_attack(&oracle, &ex.x, ex.y, &cfg).unwrap();
            assert!(oracle.calls.get() <= budget, "budget {budget} exceeded");
            for (adv, clean) in pair.x_adv.iter().zip(&pair.x_clean) {
                assert!((adv - clean).abs() <= cfg.epsilon + 1e-9);
                assert!((0.0..=1.0).contains(adv));
            }
        }
    }

    #[test]
    fn random_search_accepted_margins_never_increase() {
        let (m, test_set) = trained_blobs_mlp(5);
        let cfg = AttackConfig {
            epsilon: 0.08,
            query_budget: 400,
            seed: 9,
            ..AttackConfig::default()
        };
        for ex in test_set.examples.iter().take(10) {
            let (_, margins) = random_search_with_margins(&m, &ex.x, ex.y, &cfg).unwrap();
            for window in margins.windows(2) {
                assert!(window[1] < window[0]);
            }
        }
    }

    #[test]
    fn random_search_reaches_half_success_on_blobs() {
        // Pilot gate: natural MLP, eps 0.1, 2000 queries.
        let ds = gen_synthetic(DatasetKind::Blobs, 3, 8, 150, 3.0, 1).unwrap();
        let (train_set, _, test_set) = split(&ds, (0.7, 0.1, 0.2), 1).unwrap();
        let arch = Architecture::mlp(8, &[32, 32], 3, Activation::Relu);
        let mut tc = TrainConfig::new(60, 32, 0.3, 1);
        tc.weight_decay = 1e-4;
        let m = models::train(&arch, &train_set, &tc).unwrap();
        let cfg = AttackConfig {
            epsilon: 0.1,
            query_budget: 2000,
            seed: 33,
            ..AttackConfig::default()
        };
        let mut pairs = Vec::new();
        for (i, ex) in test_set.examples.iter().take(40).enumerate() {
            let mut sample_cfg = cfg.clone();
            sample_cfg.seed = crate::rng::derive_seed(cfg.seed, &format!("sample/{i}"));
            pairs.push(random_search_attack(&m, &ex.x, ex.y, &sample_cfg).unwrap());
        }
        let asr = attack_success_rate(&m, &pairs).unwrap();
        assert!(asr >= 0.5, "random search asr {asr}");
    }

    #[test]
    fn adaptive_with_zero_lambda_matches_targeted_pgd_bitwise() {
        let (f, test_set) = trained_blobs_mlp(7);
        let g_arch = Architecture::mlp(2, &[8], 3, Activation::Tanh);
        let g = models::train(
            &g_arch,
            &gen_synthetic(DatasetKind::Blobs, 3, 2, 60, 3.0, 7).unwrap(),
            &TrainConfig::new(20, 16, 0.5, 8),
        )
        .unwrap();
        for (i, ex) in test_set.examples.iter().take(15).enumerate() {
            let target = (ex.y + 1) % 3;
            let cfg = AttackConfig {
                epsilon: 0.1,
                step_size: 0.025,
                iterations: 10,
                random_init: true,
                lambda: 0.0,
                seed: 100 + i as u64,
                ..AttackConfig::default()
            };
            let adaptive = adaptive_joint_attack(&f, &g, &ex.x, ex.y, target, &cfg).unwrap();
            let targeted_cfg = AttackConfig {
                targeted: Some(target),
                ..cfg
            };
            let targeted = pgd(&f, &ex.x, ex.y, &targeted_cfg).unwrap();
            assert_eq!(adaptive.x_adv, targeted.x_adv);
        }
    }

    #[test]
    fn adaptive_validates_target_and_model_compatibility() {
        let f = linear_model(vec![0.0; 4], vec![0.0, 0.0], 2);
        let g3 = linear_model(vec![0.0; 6], vec![0.0, 0.0, 0.0], 2);
        let cfg = AttackConfig::default();
        assert!(adaptive_joint_attack(&f, &f, &[0.5, 0.5], 0, 0, &cfg).is_err());
        assert!(adaptive_joint_attack(&f, &g3, &[0.5, 0.5], 0, 1, &cfg).is_err());
    }

    #[test]
    fn adaptive_raises_auxiliary_confidence_on_primal_label() {
        // Against the detector's metric 1, the joint attack should leave the
        // auxiliary model far more confident in the primal's predicted label
        // than plain untargeted PGD does.
        let ds = gen_synthetic(DatasetKind::Blobs, 3, 2, 120, 3.0, 17).unwrap();
        let (train_set, _, test_set) = split(&ds, (0.7, 0.1, 0.2), 17).unwrap();
        let f = models::train(
            &Architecture::mlp(2, &[16], 3, Activation::Relu),
            &train_set,
            &TrainConfig::new(40, 16, 0.5, 18),
        )
        .unwrap();
        let g = models::train(
            &Architecture::mlp(2, &[8], 3, Activation::Tanh),
            &train_set,
            &TrainConfig::new(40, 16, 0.5, 19),
        )
        .unwrap();

        let mut g_conf_pgd = Vec::new();
        let mut g_conf_adaptive = Vec::new();
        for (i, ex) in test_set.examples.iter().enumerate() {
            if f.predict(&ex.x).unwrap() != ex.y {
                continue;
            }
            let cfg = AttackConfig {
                epsilon: 0.1,
                step_size: 0.025,
                iterations: 10,
                random_init: true,
                seed: crate::rng::derive_seed(99, &format!("sample/{i}")),
                ..AttackConfig::default()
            };
            let plain = pgd(&f, &ex.x, ex.y, &cfg).unwrap();
            if plain.succeeded {
                let label = f.predict(&plain.x_adv).unwrap();
                g_conf_pgd.push(g.forward(&plain.x_adv).unwrap().get(label));
            }
            let target = second_most_likely(&f.forward(&ex.x).unwrap());
            let joint = adaptive_joint_attack(&f, &g, &ex.x, ex.y, target, &cfg).unwrap();
            if f.predict(&joint.x_adv).unwrap() != ex.y {
                let label = f.predict(&joint.x_adv).unwrap();
                g_conf_adaptive.push(g.forward(&joint.x_adv).unwrap().get(label));
            }
        }
        assert!(!g_conf_pgd.is_empty() && !g_conf_adaptive.is_empty());
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        assert!(
            mean(&g_conf_adaptive) > mean(&g_conf_pgd),
            "adaptive {} vs pgd {}",
            mean(&g_conf_adaptive),
            mean(&g_conf_pgd)
        );
    }

    #[test]
    fn second_most_likely_breaks_ties_low() {
        let p = ConfidenceVector::new(vec![0.5, 0.25, 0.25]).unwrap();
        assert_eq!(second_most_likely(&p), 1);
        let q = ConfidenceVector::new(vec![0.2, 0.3, 0.5]).unwrap();
        assert_eq!(second_most_likely(&q), 1);
    }

    #[test]
    fn success_rate_counts_misclassification() {
        let m = linear_model(vec![10.0, 0.0, -10.0, 0.0], vec![0.0, 0.0], 2);
        // Model always predicts class 0.
        let pair = |y_true| AdversarialPair {
            x_clean: vec![0.5, 0.5],
            x_adv: vec![0.5, 0.5],
            y_true,
            succeeded: true,
        };
        let pairs = vec![pair(1), pair(1), pair(1), pair(0)];
        assert_eq!(attack_success_rate(&m, &pairs).unwrap(), 0.75);
        assert_eq!(attack_success_rate(&m, &pairs[..3]).unwrap(), 1.0);
        assert_eq!(attack_success_rate(&m, &pairs[3..]).unwrap(), 0.0);
        assert!(attack_success_rate(&m, &[]).is_err());
    }

    #[test]
    fn attacks_are_deterministic_given_seed() {
        let (m, test_set) = trained_blobs_mlp(8);
        let ex = &test_set.examples[0];
        let cfg = AttackConfig {
            epsilon: 0.1,
            seed: 123,
            ..AttackConfig::default()
        };
        assert_eq!(
            pgd(&m, &ex.x, ex.y, &cfg).unwrap(),
            pgd(&m, &ex.x, ex.y, &cfg).unwrap()
        );
        assert_eq!(
            random_search_attack(&m, &ex.x, ex.y, &cfg).unwrap(),
            random_search_attack(&m, &ex.x, ex.y, &cfg).unwrap()
        );
    }

    #[test]
    fn pair_records_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pairs.jsonl");
        let records = vec![
            AdversarialPairRecord {
                id: "a".into(),
                y_true: 1,
                x_clean: vec![0.25, 0.75],
                x_adv: vec![0.35, 0.65],
                succeeded: true,
            },
            AdversarialPairRecord {
                id: "b".into(),
                y_true: 0,
                x_clean: vec![0.5, 0.5],
                x_adv: vec![0.5, 0.5],
                succeeded: false,
            },
        ];
        write_adversarial_pairs(&path, &records).unwrap();
        assert_eq!(load_adversarial_pairs(&path).unwrap(), records);
    }
}
