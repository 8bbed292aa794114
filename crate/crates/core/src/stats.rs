//! Descriptive and inferential statistics for day/night comparisons.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cohort::PatientSequence;
use crate::features::{Period, PeriodPoint};
use crate::SEQ_LEN;

/// Smallest reported p-value. Anything below prints as `0.0` in tables.
pub const P_FLOOR: f64 = 1e-300;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatsError {
    #[error("need at least {needed} samples per group, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("zero variance: the t statistic is undefined")]
    ZeroVariance,
    #[error("empty input")]
    Empty,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TTestVariant {
    /// Equal-variance test with pooled standard deviation.
    #[default]
    Student,
    /// Unequal variances, Welch-Satterthwaite degrees of freedom.
    Welch,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTestResult {
    pub t: f64,
    pub df: f64,
    pub p_two_sided: f64,
    pub variant: TTestVariant,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuartileSummary {
    pub n: usize,
    pub q1: f64,
    pub median: f64,
    pub mean: f64,
    pub q3: f64,
}

/// P-th percentile (0..=100) of an ascending slice, linear interpolation
/// between closest ranks. The slice must be non-empty.
pub fn percentile_sorted(sorted: &[f64], p: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * (p / 100.0).clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    if lo + 1 >= n {
        return sorted[n - 1];
    }
    let (a, b) = (sorted[lo], sorted[lo + 1]);
    let frac = h - lo as f64;
    // clamp keeps interpolation inside the bracket under rounding
    (a + frac * (b - a)).clamp(a, b)
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Population (1/n) standard deviation.
pub fn population_std(values: &[f64]) -> f64 {
    let m = mean(values);
    (values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / values.len() as f64).sqrt()
}

fn sample_variance(values: &[f64], m: f64) -> f64 {
    values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (values.len() - 1) as f64
}

pub fn two_sample_t(a: &[f64], b: &[f64], variant: TTestVariant) -> Result<TTestResult, StatsError> {
    let got = a.len().min(b.len());
    if got < 2 {
        return Err(StatsError::TooFewSamples { needed: 2, got });
    }
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (ma, mb) = (mean(a), mean(b));
    let (va, vb) = (sample_variance(a, ma), sample_variance(b, mb));

    let (se, df) = match variant {
        TTestVariant::Student => {
            let pooled = ((na - 1.0) * va + (nb - 1.0) * vb) / (na + nb - 2.0);
            if pooled <= 0.0 {
                return Err(StatsError::ZeroVariance);
            }
            ((pooled * (1.0 / na + 1.0 / nb)).sqrt(), na + nb - 2.0)
        }
        TTestVariant::Welch => {
            let (sa, sb) = (va / na, vb / nb);
            if sa + sb <= 0.0 {
                return Err(StatsError::ZeroVariance);
            }
            let df = (sa + sb).powi(2) / (sa * sa / (na - 1.0) + sb * sb / (nb - 1.0));
            ((sa + sb).sqrt(), df)
        }
    };
    let t = (ma - mb) / se;
    Ok(TTestResult {
        t,
        df,
        p_two_sided: student_t_two_sided_p(t, df),
        variant,
    })
}

/// Two-sided tail probability `P(|T| >= |t|)` for Student's t with `df`
/// degrees of freedom, floored at [`P_FLOOR`].
pub fn student_t_two_sided_p(t: f64, df: f64) -> f64 {
    if t.is_nan() || df <= 0.0 {
        return f64::NAN;
    }
    if t.is_infinite() {
        return P_FLOOR;
    }
    let t2 = t * t;
    // x and 1-x computed separately to avoid cancellation
    let x = df / (df + t2);
    let y = t2 / (df + t2);
    let p = reg_inc_beta_split(df / 2.0, 0.5, x, y);
    p.clamp(P_FLOOR, 1.0)
}

/// Regularized incomplete beta `I_x(a, b)`.
pub fn reg_inc_beta(a: f64, b: f64, x: f64) -> f64 {
    reg_inc_beta_split(a, b, x, 1.0 - x)
}

/// `I_x(a, b)` with the complement `y = 1 - x` supplied by the caller.
fn reg_inc_beta_split(a: f64, b: f64, x: f64, y: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if y <= 0.0 {
        return 1.0;
    }
    let ln_front = a * x.ln() + b * y.ln() - ln_beta(a, b);
    if x < (a + 1.0) / (a + b + 2.0) {
        ln_front.exp() * beta_cf(a, b, x) / a
    } else {
        1.0 - ln_front.exp() * beta_cf(b, a, y) / b
    }
}

fn ln_beta(a: f64, b: f64) -> f64 {
    ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b)
}

/// Continued fraction for the incomplete beta function (modified Lentz).
fn beta_cf(a: f64, b: f64, x: f64) -> f64 {
    const MAX_ITER: usize = 200_000;
    const EPS: f64 = 1e-16;
    const TINY: f64 = 1e-300;

    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=MAX_ITER {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

/// Natural log of the gamma function (Lanczos, g = 7, n = 9).
pub fn ln_gamma(x: f64) -> f64 {
    const G: f64 = 7.0;
    const COEF: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = COEF[0];
    for (i, c) in COEF.iter().enumerate().skip(1) {
        acc += c / (x + i as f64);
    }
    let t = x + G + 0.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

pub fn quartile_summary(values: &[f64]) -> Result<QuartileSummary, StatsError> {
    if values.is_empty() {
        return Err(StatsError::Empty);
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(QuartileSummary {
        n: values.len(),
        q1: percentile_sorted(&sorted, 25.0),
        median: percentile_sorted(&sorted, 50.0),
        mean: mean(values),
        q3: percentile_sorted(&sorted, 75.0),
    })
}

/// Counts of sequences per number of valid days, bins 1..=7.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct LosHistogram {
    pub counts: [u64; SEQ_LEN],
}

impl LosHistogram {
    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn count(&self, days: usize) -> u64 {
        if (1..=SEQ_LEN).contains(&days) {
            self.counts[days - 1]
        } else {
            0
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("days,count\n");
        for (i, c) in self.counts.iter().enumerate() {
            out.push_str(&format!("{},{}\n", i + 1, c));
        }
        out
    }
}

pub fn los_histogram(sequences: &[PatientSequence]) -> LosHistogram {
    let mut hist = LosHistogram::default();
    for s in sequences {
        if (1..=SEQ_LEN).contains(&s.valid_days) {
            hist.counts[s.valid_days - 1] += 1;
        }
    }
    hist
}

/// Formats a p-value the way the day/night comparison table prints it.
pub fn format_p_value(p: f64) -> String {
    if p <= P_FLOOR {
        "0.0".to_string()
    } else if p < 1e-4 {
        format!("{p:.3e}")
    } else {
        format!("{p:.4}")
    }
}

/// One row of the day-versus-night comparison table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub feature: String,
    pub period: Period,
    pub summary: QuartileSummary,
    /// Set on the first row of each feature pair.
    pub p_value: Option<f64>,
}

/// Summarises day and night values of one feature and tests their means.
pub fn day_night_comparison(
    feature: &str,
    day: &[f64],
    night: &[f64],
    variant: TTestVariant,
) -> Result<[ComparisonRow; 2], StatsError> {
    let test = two_sample_t(day, night, variant)?;
    Ok([
        ComparisonRow {
            feature: feature.to_string(),
            period: Period::Day,
            summary: quartile_summary(day)?,
            p_value: Some(test.p_two_sided),
        },
        ComparisonRow {
            feature: feature.to_string(),
            period: Period::Night,
            summary: quartile_summary(night)?,
            p_value: None,
        },
    ])
}

pub fn comparison_csv(rows: &[ComparisonRow]) -> String {
    let mut out = String::from("feature,period,n,q1,median,mean,q3,p_value\n");
    for r in rows {
        let s = &r.summary;
        out.push_str(&format!(
            "{},{},{},{:.4},{:.4},{:.4},{:.4},{}\n",
            r.feature,
            r.period.as_str(),
            s.n,
            s.q1,
            s.median,
            s.mean,
            s.q3,
            r.p_value.map(format_p_value).unwrap_or_default()
        ));
    }
    out
}

pub fn period_series_csv(points: &[PeriodPoint]) -> String {
    let mut out = String::from("date,period,mean,std\n");
    for p in points {
        out.push_str(&format!(
            "{},{},{:.6},{:.6}\n",
            p.date,
            p.period.as_str(),
            p.mean,
            p.std
        ));
    }
    out
}
