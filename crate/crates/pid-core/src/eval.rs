//! Detection-quality evaluation: ROC/AUC, score summaries, and the
//! end-to-end benchmark.
//!
//! AUC uses the Mann–Whitney formulation — the probability that a random
//! adversarial score outranks a random clean score, ties counted 1/2 — via a
//! sort-and-count pass in O((a+c)·log(a+c)). [`auc_bruteforce`] is the
//! independent O(a·c) reference the fast path is tested against, and
//! [`roc_curve`] cross-checks both through the trapezoidal integral of the
//! threshold sweep.
//!
//! [`benchmark_run`] wires the whole pipeline together: generate data, train
//! the primal and auxiliary models, attack the primal on correctly classified
//! test samples, score normal and (successful) adversarial examples with each
//! configured metric, calibrate thresholds on held-out normal scores, and
//! emit one report row per (attack, metric).

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::attacks::{self, AdversarialPair, AdversarialPairRecord, AttackConfig, AttackKind};
use crate::datasets::{self, Dataset, DatasetKind, PredictionRecord};
use crate::detector::{self, DetectorConfig, MetricId};
use crate::error::{Error, Result};
use crate::models::{self, Architecture, Model, TrainConfig, TrainingMode};
use crate::rng;

fn check_scores(name: &str, scores: &[f64]) -> Result<()> {
    if scores.is_empty() {
        return Err(Error::InvalidParameter(format!("{name} scores are empty")));
    }
    if let Some(bad) = scores.iter().find(|v| !v.is_finite()) {
        return Err(Error::Numeric(format!("non-finite {name} score: {bad}")));
    }
    Ok(())
}

/// Mann–Whitney AUC: P(adv > clean) + ½·P(adv = clean) over all pairs.
pub fn auc(adv_scores: &[f64], clean_scores: &[f64]) -> Result<f64> {
    check_scores("adversarial", adv_scores)?;
    check_scores("clean", clean_scores)?;
    let mut adv = adv_scores.to_vec();
    let mut clean = clean_scores.to_vec();
    adv.sort_by(|a, b| a.partial_cmp(b).unwrap());
    clean.sort_by(|a, b| a.partial_cmp(b).unwrap());

    // Counts of clean entries strictly below / not above each adv score,
    // accumulated with two monotone cursors over the sorted arrays.
    let mut wins = 0.0f64;
    let (mut below, mut not_above) = (0usize, 0usize);
    for &a in &adv {
        while below < clean.len() && clean[below] < a {
            below += 1;
        }
        while not_above < clean.len() && clean[not_above] <= a {
            not_above += 1;
        }
        wins += below as f64 + 0.5 * (not_above - below) as f64;
    }
    Ok(wins / (adv.len() as f64 * clean.len() as f64))
}

/// Direct double loop over all (adversarial, clean) pairs; the reference
/// implementation [`auc`] is checked against.
pub fn auc_bruteforce(adv_scores: &[f64], clean_scores: &[f64]) -> Result<f64> {
    check_scores("adversarial", adv_scores)?;
    check_scores("clean", clean_scores)?;
    let mut wins = 0.0f64;
    for &a in adv_scores {
        for &c in clean_scores {
            if a > c {
                wins += 1.0;
            } else if a == c {
                wins += 0.5;
            }
        }
    }
    Ok(wins / (adv_scores.len() as f64 * clean_scores.len() as f64))
}

/// ROC curve from a threshold sweep with the strict-`>` decision rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    /// (fpr, tpr) pairs from (0,0) to (1,1), both coordinates non-decreasing.
    pub points: Vec<(f64, f64)>,
    /// Trapezoidal integral of `points`; agrees with [`auc`] within 1e-9.
    pub auc: f64,
}

pub fn roc_curve(adv_scores: &[f64], clean_scores: &[f64]) -> Result<RocCurve> {
    check_scores("adversarial", adv_scores)?;
    check_scores("clean", clean_scores)?;
    let mut adv = adv_scores.to_vec();
    let mut clean = clean_scores.to_vec();
    adv.sort_by(|a, b| a.partial_cmp(b).unwrap());
    clean.sort_by(|a, b| a.partial_cmp(b).unwrap());

    let mut thresholds: Vec<f64> = adv.iter().chain(clean.iter()).copied().collect();
    thresholds.sort_by(|a, b| b.partial_cmp(a).unwrap());
    thresholds.dedup();

    let mut points = vec![(0.0, 0.0)];
    // Cursors walk each sorted array from the top as the threshold drops.
    let mut adv_above = 0usize;
    let mut clean_above = 0usize;
    for &t in &thresholds {
        while adv_above < adv.len() && adv[adv.len() - 1 - adv_above] > t {
            adv_above += 1;
        }
        while clean_above < clean.len() && clean[clean.len() - 1 - clean_above] > t {
            clean_above += 1;
        }
        points.push((
            clean_above as f64 / clean.len() as f64,
            adv_above as f64 / adv.len() as f64,
        ));
    }
    points.push((1.0, 1.0));

    let mut area = 0.0;
    for pair in points.windows(2) {
        let ((x1, y1), (x2, y2)) = (pair[0], pair[1]);
        area += (x2 - x1) * (y1 + y2) / 2.0;
    }
    Ok(RocCurve { points, auc: area })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quantiles {
    pub q05: f64,
    pub q50: f64,
    pub q95: f64,
}

/// Equal-width histogram plus summary statistics of a score sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub bin_edges: Vec<f64>,
    pub counts: Vec<usize>,
    pub mean: f64,
    pub quantiles: Quantiles,
}

/// Summarize a score distribution with `bins` equal-width bins over
/// `[min, max]` (one degenerate bin when all scores coincide). Quantiles use
/// the nearest-rank (ceiling) convention.
pub fn score_distribution_summary(scores: &[f64], bins: usize) -> Result<Histogram> {
    check_scores("summary", scores)?;
    if bins < 1 {
        return Err(Error::InvalidParameter("bins must be >= 1".into()));
    }
    let lo = scores.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mean = scores.iter().sum::<f64>() / scores.len() as f64;

    let mut sorted = scores.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let quantile = |p: f64| {
        let rank = (p * sorted.len() as f64).ceil() as usize;
        sorted[rank.clamp(1, sorted.len()) - 1]
    };
    let quantiles = Quantiles {
        q05: quantile(0.05),
        q50: quantile(0.50),
        q95: quantile(0.95),
    };

    if hi == lo {
        return Ok(Histogram {
            bin_edges: vec![lo, hi],
            counts: vec![scores.len()],
            mean,
            quantiles,
        });
    }

    let width = (hi - lo) / bins as f64;
    let bin_edges: Vec<f64> = (0..=bins).map(|i| lo + width * i as f64).collect();
    let mut counts = vec![0usize; bins];
    for &s in scores {
        let idx = (((s - lo) / width) as usize).min(bins - 1);
        counts[idx] += 1;
    }
    Ok(Histogram {
        bin_edges,
        counts,
        mean,
        quantiles,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub kind: DatasetKind,
    pub k: usize,
    pub d: usize,
    pub n_per_class: usize,
    pub separation: f64,
}

/// Architecture, training mode, and optimizer settings for one model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub arch: Architecture,
    pub mode: TrainingMode,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    /// Inner-maximization attack; required in adversarial mode.
    pub inner_attack: Option<AttackConfig>,
}

impl ModelSpec {
    fn train_config(&self, seed: u64) -> Result<TrainConfig> {
        let adversarial = match (self.mode, &self.inner_attack) {
            (TrainingMode::Natural, _) => None,
            (TrainingMode::Adversarial, Some(attack)) => Some(attack.clone()),
            (TrainingMode::Adversarial, None) => {
                return Err(Error::Config(
                    "adversarial training mode requires inner_attack".into(),
                ))
            }
        };
        let cfg = TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            weight_decay: self.weight_decay,
            seed,
            adversarial,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NamedAttack {
    pub name: String,
    pub kind: AttackKind,
    pub config: AttackConfig,
}

/// Everything `benchmark_run` needs to reproduce a detection study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchmarkConfig {
    pub dataset: DatasetSpec,
    pub split_fractions: (f64, f64, f64),
    pub primal: ModelSpec,
    pub auxiliary: ModelSpec,
    pub attacks: Vec<NamedAttack>,
    pub metrics: Vec<MetricId>,
    /// Top-n count for metric 3.
    pub top_n: usize,
    pub target_fpr: f64,
    pub seed: u64,
}

impl BenchmarkConfig {
    /// Validate everything before any compute runs.
    pub fn validate(&self) -> Result<()> {
        self.primal.arch.validate()?;
        self.auxiliary.arch.validate()?;
        self.primal.train_config(0)?;
        self.auxiliary.train_config(0)?;
        for attack in &self.attacks {
            attack.config.validate()?;
            if attack.kind == AttackKind::RandomSearch && attack.config.query_budget < 1 {
                return Err(Error::Config(format!(
                    "attack '{}': query_budget must be >= 1",
                    attack.name
                )));
            }
        }
        let mut names: Vec<&str> = self.attacks.iter().map(|a| a.name.as_str()).collect();
        names.sort_unstable();
        names.dedup();
        if names.len() != self.attacks.len() {
            return Err(Error::Config("attack names must be unique".into()));
        }
        if self.top_n < 1 || self.top_n > self.dataset.k {
            return Err(Error::Config(format!(
                "top_n must lie in 1..={}, got {}",
                self.dataset.k, self.top_n
            )));
        }
        if !(self.target_fpr > 0.0 && self.target_fpr < 1.0) {
            return Err(Error::Config(format!(
                "target_fpr must lie in (0,1), got {}",
                self.target_fpr
            )));
        }
        Ok(())
    }

    /// Stable hex digest of the full configuration.
    pub fn digest(&self) -> String {
        let body = serde_json::to_vec(self).expect("config serializes");
        let hash = Sha256::digest(&body);
        hash.iter().take(6).map(|b| format!("{b:02x}")).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub attack_name: String,
    pub epsilon: f64,
    pub metric_id: MetricId,
    pub auc: f64,
    pub asr: f64,
    pub threshold: f64,
    pub empirical_fpr: f64,
    pub tpr_at_threshold: f64,
    pub n_adv: usize,
    pub n_clean: usize,
}

/// One row per (attack, metric), in config order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionReport {
    pub rows: Vec<ReportRow>,
    pub seed: u64,
    pub config_digest: String,
}

impl DetectionReport {
    /// Aligned plain-text table, rates as percentages with two decimals.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "detection report  digest={}  seed={}\n",
            self.config_digest, self.seed
        ));
        out.push_str(&format!(
            "{:<18} {:>8} {:>7} {:>8} {:>8} {:>12} {:>8} {:>8} {:>7} {:>8}\n",
            "attack", "epsilon", "metric", "AUC(%)", "ASR(%)", "threshold", "FPR(%)", "TPR(%)",
            "n_adv", "n_clean"
        ));
        for row in &self.rows {
            out.push_str(&format!(
                "{:<18} {:>8.4} {:>7} {:>8.2} {:>8.2} {:>12.6} {:>8.2} {:>8.2} {:>7} {:>8}\n",
                row.attack_name,
                row.epsilon,
                row.metric_id,
                row.auc * 100.0,
                row.asr * 100.0,
                row.threshold,
                row.empirical_fpr * 100.0,
                row.tpr_at_threshold * 100.0,
                row.n_adv,
                row.n_clean
            ));
        }
        out
    }
}

/// Per-attack artifacts kept alongside the report.
#[derive(Debug, Clone, PartialEq)]
pub struct AttackArtifacts {
    pub name: String,
    /// Every attacked sample, successful or not.
    pub pairs: Vec<AdversarialPairRecord>,
    /// Normal-example records plus records for successful adversarial
    /// examples, scored by both models; ready for `detect --records`.
    pub records: Vec<PredictionRecord>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkOutput {
    pub report: DetectionReport,
    pub primal: Model,
    pub auxiliary: Model,
    pub primal_test_accuracy: f64,
    pub auxiliary_test_accuracy: f64,
    pub attacks: Vec<AttackArtifacts>,
    /// Calibrated threshold per metric, in config order.
    pub thresholds: Vec<(MetricId, f64)>,
    /// Normal-example scores on the calibration split, per metric.
    pub calibration_scores: Vec<Vec<f64>>,
    /// Normal-example scores on the test split, per metric.
    pub test_ne_scores: Vec<Vec<f64>>,
}

fn metric_score(
    metric: MetricId,
    top_n: usize,
    f_scores: &crate::models::ConfidenceVector,
    g_scores: &crate::models::ConfidenceVector,
) -> Result<f64> {
    let cfg = DetectorConfig {
        metric_id: metric,
        n: top_n,
        threshold: None,
        target_fpr: 0.05,
    };
    Ok(detector::score(&cfg, f_scores, g_scores)?.value)
}

fn fraction_above(scores: &[f64], threshold: f64) -> f64 {
    scores.iter().filter(|&&s| s > threshold).count() as f64 / scores.len() as f64
}

// Scores for every example the primal classifies correctly, per metric.
// Returns (per-metric scores, records of the kept examples).
fn score_normal_examples(
    cfg: &BenchmarkConfig,
    primal: &Model,
    auxiliary: &Model,
    ds: &Dataset,
    id_prefix: &str,
) -> Result<(Vec<Vec<f64>>, Vec<PredictionRecord>, Vec<usize>)> {
    let mut per_metric = vec![Vec::new(); cfg.metrics.len()];
    let mut records = Vec::new();
    let mut kept = Vec::new();
    for (i, ex) in ds.examples.iter().enumerate() {
        let f_scores = primal.forward(&ex.x)?;
        if detector::predicted_label(&f_scores) != ex.y {
            continue;
        }
        let g_scores = auxiliary.forward(&ex.x)?;
        for (slot, &metric) in per_metric.iter_mut().zip(&cfg.metrics) {
            slot.push(metric_score(metric, cfg.top_n, &f_scores, &g_scores)?);
        }
        records.push(PredictionRecord {
            id: format!("{id_prefix}-{i}"),
            y_true: ex.y,
            f_scores,
            g_scores,
            is_adversarial: false,
        });
        kept.push(i);
    }
    Ok((per_metric, records, kept))
}

fn run_attack(
    cfg: &BenchmarkConfig,
    attack: &NamedAttack,
    primal: &Model,
    auxiliary: &Model,
    test_set: &Dataset,
    kept: &[usize],
) -> Result<Vec<(usize, AdversarialPair)>> {
    let mut pairs = Vec::with_capacity(kept.len());
    for &i in kept {
        let ex = &test_set.examples[i];
        let mut sample_cfg = attack.config.clone();
        sample_cfg.seed = rng::derive_seed(cfg.seed, &format!("attack/{}/{i}", attack.name));
        let pair = match attack.kind {
            AttackKind::Fgsm => attacks::fgsm(primal, &ex.x, ex.y, sample_cfg.epsilon)?,
            AttackKind::Pgd => attacks::pgd(primal, &ex.x, ex.y, &sample_cfg)?,
            AttackKind::RandomSearch => {
                attacks::random_search_attack(primal, &ex.x, ex.y, &sample_cfg)?
            }
            AttackKind::Adaptive => {
                let target = attacks::second_most_likely(&primal.forward(&ex.x)?);
                attacks::adaptive_joint_attack(primal, auxiliary, &ex.x, ex.y, target, &sample_cfg)?
            }
        };
        pairs.push((i, pair));
    }
    Ok(pairs)
}

/// End-to-end benchmark; see the module docs for the pipeline. Deterministic
/// given `cfg.seed`.
pub fn benchmark_run(cfg: &BenchmarkConfig) -> Result<DetectionReport> {
    Ok(benchmark_run_full(cfg)?.report)
}

/// [`benchmark_run`] plus the intermediate artifacts (models, attacked pairs,
/// prediction records, thresholds).
pub fn benchmark_run_full(cfg: &BenchmarkConfig) -> Result<BenchmarkOutput> {
    cfg.validate().map_err(|e| e.in_stage("config"))?;

    let ds = datasets::gen_synthetic(
        cfg.dataset.kind,
        cfg.dataset.k,
        cfg.dataset.d,
        cfg.dataset.n_per_class,
        cfg.dataset.separation,
        cfg.seed,
    )
    .map_err(|e| e.in_stage("data"))?;
    let (train_set, cal_set, test_set) =
        datasets::split(&ds, cfg.split_fractions, cfg.seed).map_err(|e| e.in_stage("data"))?;

    let primal = models::train(
        &cfg.primal.arch,
        &train_set,
        &cfg.primal.train_config(rng::derive_seed(cfg.seed, "train/primal"))?,
    )
    .map_err(|e| e.in_stage("train-primal"))?;
    let auxiliary = models::train(
        &cfg.auxiliary.arch,
        &train_set,
        &cfg.auxiliary.train_config(rng::derive_seed(cfg.seed, "train/auxiliary"))?,
    )
    .map_err(|e| e.in_stage("train-auxiliary"))?;

    let primal_test_accuracy =
        models::evaluate_accuracy(&primal, &test_set).map_err(|e| e.in_stage("score"))?;
    let auxiliary_test_accuracy =
        models::evaluate_accuracy(&auxiliary, &test_set).map_err(|e| e.in_stage("score"))?;

    // Normal-example scores: calibration split fixes thresholds, test split
    // provides the clean side of each AUC.
    let (cal_scores, _, _) = score_normal_examples(cfg, &primal, &auxiliary, &cal_set, "cal")
        .map_err(|e| e.in_stage("calibrate"))?;
    let (ne_scores, ne_records, kept) =
        score_normal_examples(cfg, &primal, &auxiliary, &test_set, "ne")
            .map_err(|e| e.in_stage("score"))?;
    if kept.is_empty() {
        return Err(Error::Validation(
            "primal model classifies no test example correctly".into(),
        )
        .in_stage("score"));
    }

    let mut thresholds = Vec::with_capacity(cfg.metrics.len());
    for (scores, &metric) in cal_scores.iter().zip(&cfg.metrics) {
        let threshold = detector::calibrate_threshold(scores, cfg.target_fpr)
            .map_err(|e| e.in_stage("calibrate"))?;
        thresholds.push((metric, threshold));
    }

    let mut rows = Vec::new();
    let mut artifacts = Vec::new();
    for attack in &cfg.attacks {
        let stage = format!("attack:{}", attack.name);
        let pairs = run_attack(cfg, attack, &primal, &auxiliary, &test_set, &kept)
            .map_err(|e| e.in_stage(&stage))?;

        let bare: Vec<AdversarialPair> = pairs.iter().map(|(_, p)| p.clone()).collect();
        let asr =
            attacks::attack_success_rate(&primal, &bare).map_err(|e| e.in_stage(&stage))?;

        // Only successful adversarial examples enter detection scoring.
        let mut adv_scores = vec![Vec::new(); cfg.metrics.len()];
        let mut records = ne_records.clone();
        let mut pair_records = Vec::with_capacity(pairs.len());
        for (i, pair) in &pairs {
            pair_records.push(AdversarialPairRecord::new(
                format!("{}-{i}", attack.name),
                pair,
            ));
            let f_scores = primal.forward(&pair.x_adv)?;
            if detector::predicted_label(&f_scores) == pair.y_true {
                continue;
            }
            let g_scores = auxiliary.forward(&pair.x_adv)?;
            for (slot, &metric) in adv_scores.iter_mut().zip(&cfg.metrics) {
                slot.push(metric_score(metric, cfg.top_n, &f_scores, &g_scores)?);
            }
            records.push(PredictionRecord {
                id: format!("{}-adv-{i}", attack.name),
                y_true: pair.y_true,
                f_scores,
                g_scores,
                is_adversarial: true,
            });
        }
        if adv_scores[0].is_empty() {
            return Err(Error::Validation(format!(
                "attack '{}' produced no successful adversarial example",
                attack.name
            ))
            .in_stage(&stage));
        }

        for ((adv, ne), &(metric, threshold)) in
            adv_scores.iter().zip(&ne_scores).zip(&thresholds)
        {
            rows.push(ReportRow {
                attack_name: attack.name.clone(),
                epsilon: attack.config.epsilon,
                metric_id: metric,
                auc: auc(adv, ne).map_err(|e| e.in_stage(&stage))?,
                asr,
                threshold,
                empirical_fpr: fraction_above(ne, threshold),
                tpr_at_threshold: fraction_above(adv, threshold),
                n_adv: adv.len(),
                n_clean: ne.len(),
            });
        }
        artifacts.push(AttackArtifacts {
            name: attack.name.clone(),
            pairs: pair_records,
            records,
        });
    }

    Ok(BenchmarkOutput {
        report: DetectionReport {
            rows,
            seed: cfg.seed,
            config_digest: cfg.digest(),
        },
        primal,
        auxiliary,
        primal_test_accuracy,
        auxiliary_test_accuracy,
        attacks: artifacts,
        thresholds,
        calibration_scores: cal_scores,
        test_ne_scores: ne_scores,
    })
}
