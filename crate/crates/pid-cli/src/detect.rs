//! `pid detect`: score a prediction-record file and flag adversarial inputs.

use std::path::{Path, PathBuf};

use serde::Serialize;

use pid_core::datasets::{self, PredictionRecord};
use pid_core::detector::{self, Decision, DetectorConfig, MetricId};
use pid_core::error::{Error, Result};
use pid_core::eval::{self, Histogram};

pub struct DetectArgs {
    pub records: PathBuf,
    pub metric: u8,
    pub top_n: usize,
    pub target_fpr: f64,
    /// Fixed threshold; when absent, calibrated on the file's normal records.
    pub threshold: Option<f64>,
    pub json: bool,
    pub out: Option<PathBuf>,
}

#[derive(Serialize)]
pub struct DetectSummary {
    pub metric_id: MetricId,
    pub top_n: usize,
    pub target_fpr: f64,
    pub threshold: f64,
    pub threshold_calibrated: bool,
    pub n_records: usize,
    pub n_normal: usize,
    pub n_adversarial: usize,
    /// Mann–Whitney AUC of adversarial vs normal scores; absent when the
    /// file has only one kind of record.
    pub auc: Option<f64>,
    pub empirical_fpr: f64,
    pub tpr_at_threshold: Option<f64>,
    pub normal_scores: Histogram,
    pub adversarial_scores: Option<Histogram>,
}

#[derive(Serialize)]
struct DecisionLine<'a> {
    id: &'a str,
    y_true: usize,
    is_adversarial: bool,
    score: f64,
    decision: Decision,
}

pub fn run(args: &DetectArgs) -> Result<DetectSummary> {
    let cfg = DetectorConfig {
        metric_id: MetricId::from_index(args.metric)?,
        n: args.top_n,
        threshold: args.threshold,
        target_fpr: args.target_fpr,
    };
    cfg.validate()?;

    let records = datasets::load_prediction_records(&args.records)?;
    if records.is_empty() {
        return Err(Error::Validation(format!(
            "no records in {}",
            args.records.display()
        )));
    }

    let mut scores = Vec::with_capacity(records.len());
    let mut normal_scores = Vec::new();
    let mut adv_scores = Vec::new();
    for record in &records {
        let score = detector::score(&cfg, &record.f_scores, &record.g_scores)?;
        if record.is_adversarial {
            adv_scores.push(score.value);
        } else {
            normal_scores.push(score.value);
        }
        scores.push(score);
    }

    let (threshold, threshold_calibrated) = match args.threshold {
        Some(t) => (t, false),
        None => {
            if normal_scores.is_empty() {
                return Err(Error::Validation(
                    "cannot calibrate: file contains no normal records \
                     (pass --threshold to use a fixed threshold)"
                        .into(),
                ));
            }
            (
                detector::calibrate_threshold(&normal_scores, args.target_fpr)?,
                true,
            )
        }
    };

    if let Some(out) = &args.out {
        write_decisions(out, &records, &scores, threshold)?;
    }

    let auc = if !adv_scores.is_empty() && !normal_scores.is_empty() {
        Some(eval::auc(&adv_scores, &normal_scores)?)
    } else {
        None
    };
    let fraction_above =
        |v: &[f64]| v.iter().filter(|&&s| s > threshold).count() as f64 / v.len() as f64;

    Ok(DetectSummary {
        metric_id: cfg.metric_id,
        top_n: cfg.n,
        target_fpr: cfg.target_fpr,
        threshold,
        threshold_calibrated,
        n_records: records.len(),
        n_normal: normal_scores.len(),
        n_adversarial: adv_scores.len(),
        auc,
        empirical_fpr: if normal_scores.is_empty() {
            0.0
        } else {
            fraction_above(&normal_scores)
        },
        tpr_at_threshold: if adv_scores.is_empty() {
            None
        } else {
            Some(fraction_above(&adv_scores))
        },
        normal_scores: if normal_scores.is_empty() {
            eval::score_distribution_summary(&[0.0], 1)?
        } else {
            eval::score_distribution_summary(&normal_scores, 10)?
        },
        adversarial_scores: if adv_scores.is_empty() {
            None
        } else {
            Some(eval::score_distribution_summary(&adv_scores, 10)?)
        },
    })
}

fn write_decisions(
    path: &Path,
    records: &[PredictionRecord],
    scores: &[detector::InconsistencyScore],
    threshold: f64,
) -> Result<()> {
    use std::io::Write;
    let mut writer = std::io::BufWriter::new(std::fs::File::create(path)?);
    for (record, score) in records.iter().zip(scores) {
        let line = DecisionLine {
            id: &record.id,
            y_true: record.y_true,
            is_adversarial: record.is_adversarial,
            score: score.value,
            decision: detector::decide(score, threshold),
        };
        serde_json::to_writer(&mut writer, &line)
            .map_err(|e| Error::Numeric(format!("decision serialization failed: {e}")))?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}

pub fn print_summary(summary: &DetectSummary, json: bool) -> Result<()> {
    if json {
        let body = serde_json::to_string_pretty(summary)
            .map_err(|e| Error::Numeric(format!("summary serialization failed: {e}")))?;
        println!("{body}");
        return Ok(());
    }
    println!(
        "metric {}  top_n {}  target FPR {:.2}%",
        summary.metric_id,
        summary.top_n,
        summary.target_fpr * 100.0
    );
    println!(
        "threshold {:.6} ({})",
        summary.threshold,
        if summary.threshold_calibrated {
            "calibrated on normal records"
        } else {
            "fixed via --threshold"
        }
    );
    println!(
        "records: {} total, {} normal, {} adversarial",
        summary.n_records, summary.n_normal, summary.n_adversarial
    );
    match summary.auc {
        Some(auc) => println!("AUC {:.2}%", auc * 100.0),
        None => println!("AUC n/a (need both normal and adversarial records)"),
    }
    println!("empirical FPR {:.2}%", summary.empirical_fpr * 100.0);
    if let Some(tpr) = summary.tpr_at_threshold {
        println!("TPR at threshold {:.2}%", tpr * 100.0);
    }
    println!(
        "normal score mean {:.4} (p05 {:.4}, p50 {:.4}, p95 {:.4})",
        summary.normal_scores.mean,
        summary.normal_scores.quantiles.q05,
        summary.normal_scores.quantiles.q50,
        summary.normal_scores.quantiles.q95
    );
    if let Some(adv) = &summary.adversarial_scores {
        println!(
            "adversarial score mean {:.4} (p05 {:.4}, p50 {:.4}, p95 {:.4})",
            adv.mean, adv.quantiles.q05, adv.quantiles.q50, adv.quantiles.q95
        );
    }
    Ok(())
}
