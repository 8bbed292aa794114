//! Classification metrics and percentile-bootstrap confidence intervals.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cohort::PatientSequence;
use crate::nets::{ModelConfig, Predictor};
use crate::par;
use crate::stats::percentile_sorted;

pub const METRICS_SCHEMA_VERSION: u32 = 1;

pub const METRIC_NAMES: [&str; 7] = [
    "auc",
    "accuracy",
    "f1",
    "precision",
    "sensitivity",
    "specificity",
    "npv",
];

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EvalError {
    #[error("both classes must be present")]
    SingleClass,
    #[error("scores and labels differ in length ({scores} vs {labels})")]
    LengthMismatch { scores: usize, labels: usize },
    #[error("threshold {0} is outside (0, 1)")]
    BadThreshold(f64),
    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("n_bootstrap must be >= 1")]
    NoResamples,
}

fn check_lengths(scores: &[f64], labels: &[u8]) -> Result<(), EvalError> {
    if scores.len() != labels.len() {
        return Err(EvalError::LengthMismatch {
            scores: scores.len(),
            labels: labels.len(),
        });
    }
    Ok(())
}

/// Area under the ROC curve: the probability that a random positive scores
/// above a random negative, ties counting one half.
///
/// Computed by one sort and a sweep over tie groups. The pair tally is kept
/// as an integer (twice the concordant count plus the tie count), so the
/// result equals direct pair counting bit for bit.
pub fn roc_auc(scores: &[f64], labels: &[u8]) -> Result<f64, EvalError> {
    check_lengths(scores, labels)?;
    let n_pos = labels.iter().filter(|&&y| y == 1).count() as u64;
    let n_neg = labels.len() as u64 - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(EvalError::SingleClass);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    let mut twice_concordant: u64 = 0;
    let mut neg_below: u64 = 0;
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        let (mut pos, mut neg) = (0u64, 0u64);
        while i < order.len() && scores[order[i]] == s {
            if labels[order[i]] == 1 {
                pos += 1;
            } else {
                neg += 1;
            }
            i += 1;
        }
        twice_concordant += pos * (2 * neg_below + neg);
        neg_below += neg;
    }
    Ok(twice_concordant as f64 / (2 * n_pos * n_neg) as f64)
}

/// A metric value; `defined == false` marks a zero denominator, in which case
/// `value` is 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricValue {
    pub value: f64,
    pub defined: bool,
}

impl MetricValue {
    fn ratio(num: u64, den: u64) -> Self {
        if den == 0 {
            Self::undefined()
        } else {
            Self {
                value: num as f64 / den as f64,
                defined: true,
            }
        }
    }

    fn undefined() -> Self {
        Self {
            value: 0.0,
            defined: false,
        }
    }

    pub fn get(self) -> Option<f64> {
        self.defined.then_some(self.value)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn tally(scores: &[f64], labels: &[u8], threshold: f64) -> Self {
        let mut c = Self::default();
        for (&s, &y) in scores.iter().zip(labels) {
            match (s >= threshold, y == 1) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, false) => c.tn += 1,
                (false, true) => c.fn_ += 1,
            }
        }
        c
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfusionMetrics {
    pub counts: ConfusionCounts,
    pub accuracy: MetricValue,
    pub f1: MetricValue,
    pub precision: MetricValue,
    pub sensitivity: MetricValue,
    pub specificity: MetricValue,
    pub npv: MetricValue,
}

impl ConfusionMetrics {
    pub fn from_counts(c: ConfusionCounts) -> Self {
        let precision = MetricValue::ratio(c.tp, c.tp + c.fp);
        let sensitivity = MetricValue::ratio(c.tp, c.tp + c.fn_);
        let f1 = match (precision.get(), sensitivity.get()) {
            (Some(p), Some(r)) if p + r > 0.0 => MetricValue {
                value: 2.0 * p * r / (p + r),
                defined: true,
            },
            _ => MetricValue::undefined(),
        };
        Self {
            counts: c,
            accuracy: MetricValue::ratio(c.tp + c.tn, c.tp + c.fp + c.tn + c.fn_),
            f1,
            precision,
            sensitivity,
            specificity: MetricValue::ratio(c.tn, c.tn + c.fp),
            npv: MetricValue::ratio(c.tn, c.tn + c.fn_),
        }
    }
}

/// Threshold metrics; a sample is predicted positive iff `score >= threshold`.
pub fn confusion_metrics(scores: &[f64], labels: &[u8], threshold: f64) -> ConfusionMetrics {
    ConfusionMetrics::from_counts(ConfusionCounts::tally(scores, labels, threshold))
}

/// All seven metrics of one sample, in [`METRIC_NAMES`] order.
fn metric_vector(scores: &[f64], labels: &[u8], threshold: f64) -> [MetricValue; 7] {
    let auc = match roc_auc(scores, labels) {
        Ok(v) => MetricValue {
            value: v,
            defined: true,
        },
        Err(_) => MetricValue::undefined(),
    };
    let m = confusion_metrics(scores, labels, threshold);
    [
        auc,
        m.accuracy,
        m.f1,
        m.precision,
        m.sensitivity,
        m.specificity,
        m.npv,
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub point: f64,
    pub point_defined: bool,
    /// `None` when no resample produced a defined value.
    pub ci_low: Option<f64>,
    pub ci_high: Option<f64>,
    /// Resamples where the metric had a zero denominator.
    pub n_undefined: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub auc: MetricSummary,
    pub accuracy: MetricSummary,
    pub f1: MetricSummary,
    pub precision: MetricSummary,
    pub sensitivity: MetricSummary,
    pub specificity: MetricSummary,
    pub npv: MetricSummary,
    pub threshold: f64,
    pub n_bootstrap: usize,
    pub seed: u64,
    pub n_samples: usize,
    pub n_positive: usize,
}

impl MetricsReport {
    pub fn metrics(&self) -> [(&'static str, &MetricSummary); 7] {
        [
            ("auc", &self.auc),
            ("accuracy", &self.accuracy),
            ("f1", &self.f1),
            ("precision", &self.precision),
            ("sensitivity", &self.sensitivity),
            ("specificity", &self.specificity),
            ("npv", &self.npv),
        ]
    }
}

/// Point estimates plus 2.5/97.5 percentile intervals over `n_bootstrap`
/// resamples of (score, label) pairs. Resample `b` draws from its own ChaCha
/// stream `b` under `seed`, so the report does not depend on thread count.
pub fn bootstrap_report(
    scores: &[f64],
    labels: &[u8],
    n_bootstrap: usize,
    seed: u64,
    threshold: f64,
) -> Result<MetricsReport, EvalError> {
    check_lengths(scores, labels)?;
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(EvalError::BadThreshold(threshold));
    }
    if n_bootstrap == 0 {
        return Err(EvalError::NoResamples);
    }
    let n = scores.len();
    if n < 2 {
        return Err(EvalError::TooFewSamples { needed: 2, got: n });
    }
    let point = metric_vector(scores, labels, threshold);
    if !point[0].defined {
        return Err(EvalError::SingleClass);
    }

    let resampled: Vec<[MetricValue; 7]> = par::map_range(n_bootstrap, |b| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(b as u64);
        let mut s = Vec::with_capacity(n);
        let mut y = Vec::with_capacity(n);
        for _ in 0..n {
            let i = rng.random_range(0..n);
            s.push(scores[i]);
            y.push(labels[i]);
        }
        metric_vector(&s, &y, threshold)
    });

    let summary = |k: usize| {
        let mut vals: Vec<f64> = resampled.iter().filter_map(|r| r[k].get()).collect();
        vals.sort_by(f64::total_cmp);
        let (ci_low, ci_high) = if vals.is_empty() {
            (None, None)
        } else {
            (
                Some(percentile_sorted(&vals, 2.5)),
                Some(percentile_sorted(&vals, 97.5)),
            )
        };
        MetricSummary {
            point: point[k].value,
            point_defined: point[k].defined,
            ci_low,
            ci_high,
            n_undefined: n_bootstrap - vals.len(),
        }
    };
    Ok(MetricsReport {
        auc: summary(0),
        accuracy: summary(1),
        f1: summary(2),
        precision: summary(3),
        sensitivity: summary(4),
        specificity: summary(5),
        npv: summary(6),
        threshold,
        n_bootstrap,
        seed,
        n_samples: n,
        n_positive: labels.iter().filter(|&&y| y == 1).count(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdMode {
    #[default]
    Fixed,
    /// Maximise Youden's J on the training scores.
    Youden,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub n_bootstrap: usize,
    pub seed: u64,
    pub threshold: f64,
    pub threshold_mode: ThresholdMode,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            n_bootstrap: 100,
            seed: 0,
            threshold: 0.5,
            threshold_mode: ThresholdMode::Fixed,
        }
    }
}

pub fn predict_all<P: Predictor + ?Sized>(model: &P, sequences: &[PatientSequence]) -> Vec<f64> {
    let xs: Vec<Vec<f64>> = sequences.iter().map(PatientSequence::flat).collect();
    par::map_slice(&xs, |x| model.predict(x))
}

/// Scores every test sequence and bootstraps the metrics.
pub fn evaluate<P: Predictor + ?Sized>(
    model: &P,
    test: &[PatientSequence],
    cfg: &EvalConfig,
) -> Result<MetricsReport, EvalError> {
    let scores = predict_all(model, test);
    let labels: Vec<u8> = test.iter().map(|s| s.label).collect();
    bootstrap_report(&scores, &labels, cfg.n_bootstrap, cfg.seed, cfg.threshold)
}

/// Threshold maximising sensitivity + specificity - 1 over the observed
/// scores; the smallest such score wins ties. Falls back to 0.5 when the
/// winner lies outside (0, 1).
pub fn youden_threshold(scores: &[f64], labels: &[u8]) -> Result<f64, EvalError> {
    check_lengths(scores, labels)?;
    let mut candidates: Vec<f64> = scores.to_vec();
    candidates.sort_by(f64::total_cmp);
    candidates.dedup();
    let mut best: Option<(f64, f64)> = None;
    for &t in &candidates {
        let m = confusion_metrics(scores, labels, t);
        let (Some(se), Some(sp)) = (m.sensitivity.get(), m.specificity.get()) else {
            return Err(EvalError::SingleClass);
        };
        let j = se + sp - 1.0;
        if best.is_none_or(|(bj, _)| j > bj) {
            best = Some((j, t));
        }
    }
    match best {
        Some((_, t)) if t > 0.0 && t < 1.0 => Ok(t),
        Some(_) => Ok(0.5),
        None => Err(EvalError::SingleClass),
    }
}

/// One row of the metrics document: a data selection and a method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub data: String,
    pub method: String,
    pub config: Option<ModelConfig>,
    pub report: MetricsReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsDocument {
    pub schema_version: u32,
    pub rows: Vec<MetricsRow>,
}

impl MetricsDocument {
    pub fn new(rows: Vec<MetricsRow>) -> Self {
        Self {
            schema_version: METRICS_SCHEMA_VERSION,
            rows,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("metrics serialise")
    }
}
