//! Strict TOML run-configuration schema.
//!
//! Unknown keys are rejected everywhere, the global seed is mandatory (no
//! wall-clock defaults), and every value is validated before any compute
//! starts. Detector defaults follow the toolkit conventions: metric 1,
//! top-n 3, target FPR 5%.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use pid_core::attacks::{AttackConfig, AttackKind, Norm};
use pid_core::datasets::DatasetKind;
use pid_core::detector::MetricId;
use pid_core::error::{Error, Result};
use pid_core::eval::{BenchmarkConfig, DatasetSpec, ModelSpec, NamedAttack};
use pid_core::models::{Activation, Architecture, TrainingMode};

/// A parsed, fully validated run configuration.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub benchmark: BenchmarkConfig,
    pub output_dir: Option<PathBuf>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    seed: Option<u64>,
    output_dir: Option<PathBuf>,
    dataset: RawDataset,
    split: Option<RawSplit>,
    primal: RawModel,
    auxiliary: RawModel,
    #[serde(default, rename = "attack")]
    attacks: Vec<RawAttack>,
    detector: Option<RawDetector>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDataset {
    kind: DatasetKind,
    classes: usize,
    dimension: usize,
    n_per_class: usize,
    separation: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSplit {
    train: f64,
    calibrate: f64,
    test: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawModel {
    arch: RawArchKind,
    #[serde(default)]
    hidden: Vec<usize>,
    activation: Option<Activation>,
    mode: Option<TrainingMode>,
    epochs: usize,
    batch_size: usize,
    learning_rate: f64,
    #[serde(default)]
    weight_decay: f64,
    inner_attack: Option<RawAttackParams>,
}

#[derive(Debug, Deserialize, Clone, Copy, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
enum RawArchKind {
    Linear,
    Mlp,
}

// serde's deny_unknown_fields does not compose with flatten, so the attack
// table spells its parameter fields out instead of flattening RawAttackParams.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawAttack {
    name: String,
    kind: AttackKind,
    epsilon: f64,
    step_size: Option<f64>,
    iterations: Option<usize>,
    random_init: Option<bool>,
    target: Option<usize>,
    lambda: Option<f64>,
    query_budget: Option<usize>,
}

impl RawAttack {
    fn params(&self) -> RawAttackParams {
        RawAttackParams {
            epsilon: self.epsilon,
            step_size: self.step_size,
            iterations: self.iterations,
            random_init: self.random_init,
            target: self.target,
            lambda: self.lambda,
            query_budget: self.query_budget,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawAttackParams {
    epsilon: f64,
    step_size: Option<f64>,
    iterations: Option<usize>,
    random_init: Option<bool>,
    target: Option<usize>,
    lambda: Option<f64>,
    query_budget: Option<usize>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDetector {
    metrics: Option<Vec<u8>>,
    top_n: Option<usize>,
    target_fpr: Option<f64>,
}

impl RawAttackParams {
    // Omitted step size defaults to epsilon/4, the usual PGD template.
    fn build(&self) -> AttackConfig {
        AttackConfig {
            epsilon: self.epsilon,
            step_size: self.step_size.unwrap_or(self.epsilon / 4.0),
            iterations: self.iterations.unwrap_or(10),
            random_init: self.random_init.unwrap_or(true),
            norm: Norm::Linf,
            targeted: self.target,
            lambda: self.lambda.unwrap_or(1.0),
            query_budget: self.query_budget.unwrap_or(1000),
            seed: 0,
        }
    }
}

impl RawModel {
    fn build(&self, dimension: usize, classes: usize, which: &str) -> Result<ModelSpec> {
        let arch = match self.arch {
            RawArchKind::Linear => {
                if !self.hidden.is_empty() {
                    return Err(Error::Config(format!(
                        "{which}: key 'hidden' is not allowed for a linear architecture"
                    )));
                }
                Architecture::linear(dimension, classes)
            }
            RawArchKind::Mlp => {
                if self.hidden.is_empty() {
                    return Err(Error::Config(format!(
                        "{which}: key 'hidden' must list at least one layer width for an mlp"
                    )));
                }
                Architecture::mlp(
                    dimension,
                    &self.hidden,
                    classes,
                    self.activation.unwrap_or(Activation::Relu),
                )
            }
        };
        let mode = self.mode.unwrap_or(TrainingMode::Natural);
        let inner_attack = match (mode, &self.inner_attack) {
            (TrainingMode::Adversarial, Some(params)) => Some(params.build()),
            (TrainingMode::Adversarial, None) => {
                return Err(Error::Config(format!(
                    "{which}: key 'inner_attack' is required when mode = \"adversarial\""
                )))
            }
            (TrainingMode::Natural, Some(_)) => {
                return Err(Error::Config(format!(
                    "{which}: key 'inner_attack' is only allowed when mode = \"adversarial\""
                )))
            }
            (TrainingMode::Natural, None) => None,
        };
        Ok(ModelSpec {
            arch,
            mode,
            epochs: self.epochs,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            weight_decay: self.weight_decay,
            inner_attack,
        })
    }
}

/// Parse and validate a configuration file. No artifact is written and no
/// compute runs if this fails.
pub fn parse_config(path: &Path) -> Result<RunConfig> {
    let body = std::fs::read_to_string(path)?;
    parse_config_str(&body)
}

pub fn parse_config_str(body: &str) -> Result<RunConfig> {
    let raw: RawConfig = toml::from_str(body).map_err(|e| Error::Config(e.to_string()))?;
    let seed = raw
        .seed
        .ok_or_else(|| Error::Config("key 'seed' is required (runs must be reproducible)".into()))?;

    let split = raw
        .split
        .map(|s| (s.train, s.calibrate, s.test))
        .unwrap_or((0.5, 0.25, 0.25));

    let detector = raw.detector.unwrap_or(RawDetector {
        metrics: None,
        top_n: None,
        target_fpr: None,
    });
    let metric_ids = detector.metrics.unwrap_or_else(|| vec![1]);
    let metrics = metric_ids
        .iter()
        .map(|&m| MetricId::from_index(m).map_err(|e| Error::Config(e.to_string())))
        .collect::<Result<Vec<_>>>()?;
    if metrics.is_empty() {
        return Err(Error::Config("detector.metrics must not be empty".into()));
    }

    let mut attacks = Vec::with_capacity(raw.attacks.len());
    for attack in &raw.attacks {
        attacks.push(NamedAttack {
            name: attack.name.clone(),
            kind: attack.kind,
            config: attack.params().build(),
        });
    }

    let benchmark = BenchmarkConfig {
        dataset: DatasetSpec {
            kind: raw.dataset.kind,
            k: raw.dataset.classes,
            d: raw.dataset.dimension,
            n_per_class: raw.dataset.n_per_class,
            separation: raw.dataset.separation,
        },
        split_fractions: split,
        primal: raw
            .primal
            .build(raw.dataset.dimension, raw.dataset.classes, "primal")?,
        auxiliary: raw
            .auxiliary
            .build(raw.dataset.dimension, raw.dataset.classes, "auxiliary")?,
        attacks,
        metrics,
        top_n: detector.top_n.unwrap_or(3),
        target_fpr: detector.target_fpr.unwrap_or(0.05),
        seed,
    };
    benchmark.validate()?;
    Ok(RunConfig {
        benchmark,
        output_dir: raw.output_dir,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
seed = 7

[dataset]
kind = "blobs"
classes = 3
dimension = 4
n_per_class = 50
separation = 3.0

[primal]
arch = "mlp"
hidden = [16]
epochs = 10
batch_size = 16
learning_rate = 0.3

[auxiliary]
arch = "linear"
epochs = 10
batch_size = 16
learning_rate = 0.3

[[attack]]
name = "pgd"
kind = "pgd"
epsilon = 0.1
"#;

    #[test]
    fn minimal_config_fills_documented_defaults() {
        let cfg = parse_config_str(MINIMAL).unwrap();
        assert_eq!(cfg.benchmark.seed, 7);
        assert_eq!(cfg.benchmark.metrics, vec![MetricId::M1]);
        assert_eq!(cfg.benchmark.top_n, 3);
        assert_eq!(cfg.benchmark.target_fpr, 0.05);
        assert_eq!(cfg.benchmark.split_fractions, (0.5, 0.25, 0.25));
        let attack = &cfg.benchmark.attacks[0];
        assert_eq!(attack.config.step_size, 0.025);
        assert_eq!(attack.config.iterations, 10);
        assert!(attack.config.random_init);
        assert_eq!(attack.config.lambda, 1.0);
    }

    #[test]
    fn unknown_key_is_rejected_by_name() {
        let bad = MINIMAL.replace("epsilon = 0.1", "epsilonn = 0.1");
        match parse_config_str(&bad) {
            Err(Error::Config(message)) => {
                assert!(message.contains("epsilonn"), "message: {message}")
            }
            other => panic!("expected config error, got {other:?}"),
        }
    }

    #[test]
    fn missing_seed_is_rejected() {
        let bad = MINIMAL.replace("seed = 7", "");
        match parse_config_str(&bad) {
            Err(Error::Config(message)) => assert!(message.contains("seed")),
            other => panic!("expected config error, got {other:?}"),
        }
    }

    #[test]
    fn negative_epsilon_is_rejected_during_validation() {
        let bad = MINIMAL.replace("epsilon = 0.1", "epsilon = -0.1");
        assert!(parse_config_str(&bad).is_err());
    }

    #[test]
    fn adversarial_mode_requires_inner_attack() {
        let bad = MINIMAL.replace("arch = \"mlp\"", "arch = \"mlp\"\nmode = \"adversarial\"");
        match parse_config_str(&bad) {
            Err(Error::Config(message)) => assert!(message.contains("inner_attack")),
            other => panic!("expected config error, got {other:?}"),
        }
    }

    #[test]
    fn linear_arch_rejects_hidden_widths() {
        let bad = MINIMAL.replace("arch = \"linear\"", "arch = \"linear\"\nhidden = [4]");
        match parse_config_str(&bad) {
            Err(Error::Config(message)) => assert!(message.contains("hidden")),
            other => panic!("expected config error, got {other:?}"),
        }
    }
}
