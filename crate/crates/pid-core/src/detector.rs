//! The four prediction-inconsistency metrics and the detection decision.
//!
//! All four metrics compare the primal confidence vector `f(x)` against the
//! auxiliary `g(x)`:
//!
//! - Metric 1: `1 − g_y(x)` with `y = argmax f(x)` — the auxiliary model's
//!   missing confidence on the primal label. Only the hard label of `f` is
//!   used, which is what makes it robust to calibration shifts in `f`.
//! - Metric 2: `f_y(x) − g_y(x)`.
//! - Metric 3: ℓ₁ distance restricted to `f`'s top-`n` labels.
//! - Metric 4: full ℓ₁ distance `‖f(x) − g(x)‖₁`.
//!
//! A sample is flagged adversarial when its score strictly exceeds a
//! threshold, calibrated as an empirical quantile of normal-example scores at
//! a target false-positive rate.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{argmax_lowest_tie, ConfidenceVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MetricId {
    #[serde(rename = "1")]
    M1,
    #[serde(rename = "2")]
    M2,
    #[serde(rename = "3")]
    M3,
    #[serde(rename = "4")]
    M4,
}

impl MetricId {
    pub fn from_index(index: u8) -> Result<Self> {
        match index {
            1 => Ok(MetricId::M1),
            2 => Ok(MetricId::M2),
            3 => Ok(MetricId::M3),
            4 => Ok(MetricId::M4),
            other => Err(Error::InvalidParameter(format!(
                "metric id must be 1..=4, got {other}"
            ))),
        }
    }

    pub fn index(self) -> u8 {
        match self {
            MetricId::M1 => 1,
            MetricId::M2 => 2,
            MetricId::M3 => 3,
            MetricId::M4 => 4,
        }
    }
}

impl std::fmt::Display for MetricId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.index())
    }
}

/// A scalar inconsistency value tagged with the metric that produced it.
/// Ranges: metric 1 in [0,1], metric 2 in [-1,1], metrics 3 and 4 in [0,2].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InconsistencyScore {
    pub value: f64,
    pub metric_id: MetricId,
    /// Top-n count, set for metric 3 only.
    pub n: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorConfig {
    pub metric_id: MetricId,
    /// Top-n count for metric 3.
    pub n: usize,
    /// Calibrated decision threshold; absent until calibration has run.
    pub threshold: Option<f64>,
    pub target_fpr: f64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig {
            metric_id: MetricId::M1,
            n: 3,
            threshold: None,
            target_fpr: 0.05,
        }
    }
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n < 1 {
            return Err(Error::InvalidParameter("n must be >= 1".into()));
        }
        if !(self.target_fpr > 0.0 && self.target_fpr < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "target_fpr must lie in (0,1), got {}",
                self.target_fpr
            )));
        }
        Ok(())
    }
}

/// Hard label: index of the maximum confidence, ties broken by lowest index.
pub fn predicted_label(p: &ConfidenceVector) -> usize {
    argmax_lowest_tie(p.as_slice())
}

fn check_same_k(f_scores: &ConfidenceVector, g_scores: &ConfidenceVector) -> Result<()> {
    if f_scores.k() != g_scores.k() {
        return Err(Error::InvalidParameter(format!(
            "confidence vectors disagree on class count: {} vs {}",
            f_scores.k(),
            g_scores.k()
        )));
    }
    Ok(())
}

/// Metric 1: `1 − g_y(x)` for `y = argmax f(x)`.
pub fn metric1(f_scores: &ConfidenceVector, g_scores: &ConfidenceVector) -> Result<InconsistencyScore> {
    check_same_k(f_scores, g_scores)?;
    let y = predicted_label(f_scores);
    Ok(InconsistencyScore {
        value: 1.0 - g_scores.get(y),
        metric_id: MetricId::M1,
        n: None,
    })
}

/// Metric 2: `f_y(x) − g_y(x)` for `y = argmax f(x)`.
pub fn metric2(f_scores: &ConfidenceVector, g_scores: &ConfidenceVector) -> Result<InconsistencyScore> {
    check_same_k(f_scores, g_scores)?;
    let y = predicted_label(f_scores);
    Ok(InconsistencyScore {
        value: f_scores.get(y) - g_scores.get(y),
        metric_id: MetricId::M2,
        n: None,
    })
}

// Indices of the n largest entries of f, descending value, ties by lowest
// index; returned re-sorted ascending so downstream sums have a fixed
// association order (this makes metric3(n=k) bit-identical to metric4 and
// monotone in n).
fn top_n_indices(values: &[f64], n: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].partial_cmp(&values[a]).unwrap().then(a.cmp(&b)));
    let mut selected = order[..n].to_vec();
    selected.sort_unstable();
    selected
}

/// Metric 3: ℓ₁ distance over `f`'s top-`n` labels.
pub fn metric3(
    f_scores: &ConfidenceVector,
    g_scores: &ConfidenceVector,
    n: usize,
) -> Result<InconsistencyScore> {
    check_same_k(f_scores, g_scores)?;
    if n < 1 || n > f_scores.k() {
        return Err(Error::InvalidParameter(format!(
            "n must lie in 1..={}, got {n}",
            f_scores.k()
        )));
    }
    let value = top_n_indices(f_scores.as_slice(), n)
        .into_iter()
        .map(|i| (f_scores.get(i) - g_scores.get(i)).abs())
        .sum();
    Ok(InconsistencyScore {
        value,
        metric_id: MetricId::M3,
        n: Some(n),
    })
}

/// Metric 4: full ℓ₁ distance `‖f(x) − g(x)‖₁`.
pub fn metric4(f_scores: &ConfidenceVector, g_scores: &ConfidenceVector) -> Result<InconsistencyScore> {
    check_same_k(f_scores, g_scores)?;
    let value = f_scores
        .as_slice()
        .iter()
        .zip(g_scores.as_slice())
        .map(|(&f, &g)| (f - g).abs())
        .sum();
    Ok(InconsistencyScore {
        value,
        metric_id: MetricId::M4,
        n: None,
    })
}

/// Score a primal/auxiliary pair with the configured metric.
pub fn score(
    cfg: &DetectorConfig,
    f_scores: &ConfidenceVector,
    g_scores: &ConfidenceVector,
) -> Result<InconsistencyScore> {
    match cfg.metric_id {
        MetricId::M1 => metric1(f_scores, g_scores),
        MetricId::M2 => metric2(f_scores, g_scores),
        MetricId::M3 => metric3(f_scores, g_scores, cfg.n),
        MetricId::M4 => metric4(f_scores, g_scores),
    }
}

/// Threshold at a target false-positive rate: the `ceil((1 − target_fpr)·n)`-th
/// smallest normal-example score. With the strict-`>` decision rule the
/// empirical FPR on the calibration scores never exceeds `target_fpr`.
pub fn calibrate_threshold(ne_scores: &[f64], target_fpr: f64) -> Result<f64> {
    if ne_scores.is_empty() {
        return Err(Error::InvalidParameter(
            "cannot calibrate on an empty score list".into(),
        ));
    }
    if !(target_fpr > 0.0 && target_fpr < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "target_fpr must lie in (0,1), got {target_fpr}"
        )));
    }
    if let Some(bad) = ne_scores.iter().find(|v| !v.is_finite()) {
        return Err(Error::Numeric(format!("non-finite score: {bad}")));
    }
    let mut sorted = ne_scores.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = sorted.len();
    let rank = ((1.0 - target_fpr) * n as f64).ceil() as usize;
    Ok(sorted[rank.clamp(1, n) - 1])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Decision {
    Adversarial,
    Normal,
}

/// Flag a sample as adversarial iff its score strictly exceeds the threshold.
pub fn decide(score: &InconsistencyScore, threshold: f64) -> Decision {
    if score.value > threshold {
        Decision::Adversarial
    } else {
        Decision::Normal
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cv(values: &[f64]) -> ConfidenceVector {
        ConfidenceVector::new(values.to_vec()).unwrap()
    }

    #[test]
    fn predicted_label_takes_argmax_with_low_tie() {
        assert_eq!(predicted_label(&cv(&[0.2, 0.5, 0.3])), 1);
        assert_eq!(predicted_label(&cv(&[0.5, 0.5])), 0);
        assert_eq!(predicted_label(&cv(&[0.0, 0.0, 1.0])), 2);
    }

    #[test]
    fn metric1_examples() {
        // Perfect agreement: auxiliary fully confident in f's label.
        assert_eq!(metric1(&cv(&[0.9, 0.1]), &cv(&[1.0, 0.0])).unwrap().value, 0.0);
        // f's label is 0, g gives it 0.7.
        let s = metric1(&cv(&[0.8, 0.1, 0.1]), &cv(&[0.7, 0.2, 0.1])).unwrap();
        assert!((s.value - 0.3).abs() < 1e-15);
        assert_eq!(s.metric_id, MetricId::M1);
        // Adversarial case: auxiliary assigns ~0.02 to the primal label,
        // leaving inconsistency near the top of the range.
        let s = metric1(&cv(&[0.9, 0.05, 0.05]), &cv(&[0.02, 0.49, 0.49])).unwrap();
        assert!((s.value - 0.98).abs() < 1e-12);
    }

    #[test]
    fn metric2_examples() {
        let s = metric2(&cv(&[0.9, 0.05, 0.05]), &cv(&[0.7, 0.2, 0.1])).unwrap();
        assert!((s.value - 0.2).abs() < 1e-12);
        let same = cv(&[0.6, 0.3, 0.1]);
        assert_eq!(metric2(&same, &same).unwrap().value, 0.0);
    }

    #[test]
    fn metric2_never_exceeds_metric1() {
        let mut rng = crate::rng::stream(3, "test/m2");
        use rand::Rng;
        for _ in 0..1000 {
            let k = rng.gen_range(2..8);
            let sample = |rng: &mut rand_chacha::ChaCha8Rng| {
                let raw: Vec<f64> = (0..k).map(|_| rng.gen_range(0.0f64..1.0) + 1e-9).collect();
                let sum: f64 = raw.iter().sum();
                cv(&raw.iter().map(|v| v / sum).collect::<Vec<_>>())
            };
            let f = sample(&mut rng);
            let g = sample(&mut rng);
            let m1 = metric1(&f, &g).unwrap().value;
            let m2 = metric2(&f, &g).unwrap().value;
            assert!(m2 <= m1);
            // metric1 - metric2 = 1 - f_y
            let fy = f.get(predicted_label(&f));
            assert!((m1 - m2 - (1.0 - fy)).abs() < 1e-12);
        }
    }

    #[test]
    fn metric3_hand_oracle() {
        let f = cv(&[0.5, 0.3, 0.15, 0.05]);
        let g = cv(&[0.25, 0.25, 0.25, 0.25]);
        // Top-3 of f is {0,1,2}: |0.25| + |0.05| + |0.10| = 0.40.
        let s = metric3(&f, &g, 3).unwrap();
        assert!((s.value - 0.40).abs() < 1e-12);
        assert_eq!(s.n, Some(3));
        assert_eq!(metric3(&f, &f, 2).unwrap().value, 0.0);
    }

    #[test]
    fn metric3_with_full_n_reduces_to_metric4() {
        let f = cv(&[0.5, 0.3, 0.15, 0.05]);
        let g = cv(&[0.1, 0.2, 0.3, 0.4]);
        let m3 = metric3(&f, &g, 4).unwrap().value;
        let m4 = metric4(&f, &g).unwrap().value;
        assert_eq!(m3, m4);
    }

    #[test]
    fn metric3_rejects_n_out_of_range() {
        let f = cv(&[0.5, 0.5]);
        assert!(metric3(&f, &f, 0).is_err());
        assert!(metric3(&f, &f, 3).is_err());
    }

    #[test]
    fn metric4_examples() {
        let f = cv(&[0.5, 0.3, 0.15, 0.05]);
        let g = cv(&[0.25, 0.25, 0.25, 0.25]);
        assert!((metric4(&f, &g).unwrap().value - 0.60).abs() < 1e-12);
        assert_eq!(metric4(&f, &f).unwrap().value, 0.0);
        // Disjoint one-hots realize the maximum.
        let a = cv(&[1.0, 0.0]);
        let b = cv(&[0.0, 1.0]);
        assert_eq!(metric4(&a, &b).unwrap().value, 2.0);
        // Full-vector l1 is symmetric.
        assert_eq!(metric4(&f, &g).unwrap().value, metric4(&g, &f).unwrap().value);
    }

    #[test]
    fn metrics_reject_length_mismatch() {
        let f = cv(&[0.5, 0.5]);
        let g = cv(&[0.4, 0.3, 0.3]);
        assert!(metric1(&f, &g).is_err());
        assert!(metric2(&f, &g).is_err());
        assert!(metric3(&f, &g, 1).is_err());
        assert!(metric4(&f, &g).is_err());
    }

    #[test]
    fn metric1_depends_on_f_only_through_its_argmax() {
        let g = cv(&[0.2, 0.5, 0.3]);
        let a = metric1(&cv(&[0.1, 0.8, 0.1]), &g).unwrap().value;
        let b = metric1(&cv(&[0.3, 0.4, 0.3]), &g).unwrap().value;
        assert_eq!(a, b);
    }

    #[test]
    fn calibration_matches_quantile_rule() {
        let scores: Vec<f64> = (1..=10).map(|i| i as f64 / 10.0).collect();
        let threshold = calibrate_threshold(&scores, 0.1).unwrap();
        assert_eq!(threshold, 0.9);
        let fpr = scores.iter().filter(|&&s| s > threshold).count() as f64 / 10.0;
        assert!((fpr - 0.1).abs() < 1e-15);

        // Exhaustive check against the rule's definition: the chosen
        // threshold is the smallest candidate keeping FPR <= target.
        for target in [0.05, 0.1, 0.25, 0.5, 0.95] {
            let threshold = calibrate_threshold(&scores, target).unwrap();
            let fpr_of = |t: f64| scores.iter().filter(|&&s| s > t).count() as f64 / 10.0;
            assert!(fpr_of(threshold) <= target);
            for &candidate in &scores {
                if candidate < threshold {
                    assert!(fpr_of(candidate) > target);
                }
            }
        }
    }

    #[test]
    fn calibration_degenerate_and_limit_cases() {
        let same = vec![0.4; 25];
        let threshold = calibrate_threshold(&same, 0.3).unwrap();
        assert_eq!(threshold, 0.4);
        assert_eq!(same.iter().filter(|&&s| s > threshold).count(), 0);

        let distinct: Vec<f64> = (0..50).map(|i| i as f64).collect();
        let threshold = calibrate_threshold(&distinct, 1e-9).unwrap();
        assert_eq!(threshold, 49.0);
    }

    #[test]
    fn calibration_rejects_bad_input() {
        assert!(calibrate_threshold(&[], 0.05).is_err());
        assert!(calibrate_threshold(&[0.1], 0.0).is_err());
        assert!(calibrate_threshold(&[0.1], 1.0).is_err());
        assert!(calibrate_threshold(&[f64::NAN], 0.05).is_err());
    }

    #[test]
    fn decision_uses_strict_inequality() {
        let score = |value| InconsistencyScore {
            value,
            metric_id: MetricId::M1,
            n: None,
        };
        assert_eq!(decide(&score(0.9), 0.5), Decision::Adversarial);
        assert_eq!(decide(&score(0.5), 0.5), Decision::Normal);
        assert_eq!(decide(&score(0.1), 0.5), Decision::Normal);
    }

    #[test]
    fn detector_config_validation() {
        let mut cfg = DetectorConfig::default();
        assert!(cfg.validate().is_ok());
        cfg.n = 0;
        assert!(cfg.validate().is_err());
        cfg.n = 3;
        cfg.target_fpr = 1.0;
        assert!(cfg.validate().is_err());
    }
}
