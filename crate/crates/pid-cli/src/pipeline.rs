//! Artifact-writing pipeline behind the `train`, `attack`, `evaluate`, and
//! `reproduce` subcommands.
//!
//! Every stage is deterministic given the config seed, so each subcommand
//! recomputes from the configuration rather than reading earlier artifacts;
//! rerunning a command overwrites its outputs with byte-identical files. A
//! `.pid-incomplete` sentinel exists in the output directory while a run is
//! in flight and is removed on success, so a leftover sentinel marks partial
//! output.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use pid_core::detector::MetricId;
use pid_core::error::{Error, Result};
use pid_core::eval::{self, BenchmarkOutput, DetectionReport, Histogram};
use pid_core::{datasets, models};

use crate::config::RunConfig;

/// How much of the pipeline a subcommand runs and writes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scope {
    /// Data + model training; writes model files only.
    Train,
    /// Everything up to adversarial-example generation; writes models,
    /// attacked pairs, and prediction records.
    Attack,
    /// The full study; additionally writes calibration, score summaries,
    /// and the detection report.
    Evaluate,
}

pub struct PipelineSummary {
    pub output: BenchmarkOutput,
    pub out_dir: PathBuf,
    pub report_paths: Vec<PathBuf>,
}

const SENTINEL: &str = ".pid-incomplete";

/// Resolve the output directory: flag, then config, then `PID_OUT_DIR`,
/// then `./pid-out`.
pub fn resolve_out_dir(flag: Option<PathBuf>, cfg: &RunConfig) -> PathBuf {
    flag.or_else(|| cfg.output_dir.clone())
        .or_else(|| std::env::var_os("PID_OUT_DIR").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("pid-out"))
}

pub fn run(cfg: &RunConfig, out_dir: &Path, scope: Scope) -> Result<PipelineSummary> {
    let mut benchmark_cfg = cfg.benchmark.clone();
    if scope == Scope::Train {
        benchmark_cfg.attacks.clear();
    }
    // Validation-first: nothing is created on a bad config.
    benchmark_cfg.validate().map_err(|e| e.in_stage("config"))?;

    fs::create_dir_all(out_dir)?;
    let sentinel = out_dir.join(SENTINEL);
    fs::write(&sentinel, "run in progress\n")?;

    let output = eval::benchmark_run_full(&benchmark_cfg)?;
    let report_paths = write_artifacts(&benchmark_cfg, &output, out_dir, scope)?;

    fs::remove_file(&sentinel)?;
    Ok(PipelineSummary {
        output,
        out_dir: out_dir.to_path_buf(),
        report_paths,
    })
}

#[derive(Serialize)]
struct CalibrationFile {
    target_fpr: f64,
    n_calibration_scores: usize,
    thresholds: Vec<ThresholdEntry>,
}

#[derive(Serialize)]
struct ThresholdEntry {
    metric_id: MetricId,
    threshold: f64,
}

#[derive(Serialize)]
struct ScoreSummaryFile {
    /// Normal-example score histograms per metric, calibration split.
    calibration: Vec<MetricHistogram>,
    /// Normal-example score histograms per metric, test split.
    test: Vec<MetricHistogram>,
}

#[derive(Serialize)]
struct MetricHistogram {
    metric_id: MetricId,
    histogram: Histogram,
}

fn write_artifacts(
    cfg: &pid_core::eval::BenchmarkConfig,
    output: &BenchmarkOutput,
    out_dir: &Path,
    scope: Scope,
) -> Result<Vec<PathBuf>> {
    let models_dir = out_dir.join("models");
    fs::create_dir_all(&models_dir)?;
    models::save_model(&models_dir.join("primal.json"), &output.primal)?;
    models::save_model(&models_dir.join("auxiliary.json"), &output.auxiliary)?;

    if scope == Scope::Train {
        return Ok(Vec::new());
    }

    let attacks_dir = out_dir.join("attacks");
    let records_dir = out_dir.join("records");
    fs::create_dir_all(&attacks_dir)?;
    fs::create_dir_all(&records_dir)?;
    for artifact in &output.attacks {
        pid_core::attacks::write_adversarial_pairs(
            &attacks_dir.join(format!("{}.pairs.jsonl", artifact.name)),
            &artifact.pairs,
        )?;
        datasets::write_prediction_records(
            &records_dir.join(format!("{}.records.jsonl", artifact.name)),
            &artifact.records,
        )?;
    }

    if scope == Scope::Attack {
        return Ok(Vec::new());
    }

    let calibration = CalibrationFile {
        target_fpr: cfg.target_fpr,
        n_calibration_scores: output.calibration_scores.first().map_or(0, Vec::len),
        thresholds: output
            .thresholds
            .iter()
            .map(|&(metric_id, threshold)| ThresholdEntry {
                metric_id,
                threshold,
            })
            .collect(),
    };
    write_json(&out_dir.join("calibration.json"), &calibration)?;

    let histograms = |scores: &[Vec<f64>]| -> Result<Vec<MetricHistogram>> {
        scores
            .iter()
            .zip(&cfg.metrics)
            .map(|(s, &metric_id)| {
                Ok(MetricHistogram {
                    metric_id,
                    histogram: eval::score_distribution_summary(s, 10)?,
                })
            })
            .collect()
    };
    let summary = ScoreSummaryFile {
        calibration: histograms(&output.calibration_scores)?,
        test: histograms(&output.test_ne_scores)?,
    };
    write_json(&out_dir.join("score_summary.json"), &summary)?;

    let stem = format!(
        "report_{}_seed{}",
        output.report.config_digest, output.report.seed
    );
    let json_path = out_dir.join(format!("{stem}.json"));
    write_json(&json_path, &output.report)?;
    let txt_path = out_dir.join(format!("{stem}.txt"));
    fs::write(&txt_path, output.report.to_table())?;
    Ok(vec![json_path, txt_path])
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let body = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Numeric(format!("serialization failed: {e}")))?;
    fs::write(path, body + "\n")?;
    Ok(())
}

/// Gate check outcome for `reproduce`.
pub struct GateResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

pub fn report_auc(report: &DetectionReport, attack: &str, metric: MetricId) -> Option<f64> {
    report
        .rows
        .iter()
        .find(|r| r.attack_name == attack && r.metric_id == metric)
        .map(|r| r.auc)
}
