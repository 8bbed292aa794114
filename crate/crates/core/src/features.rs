//! Day/night segmentation and per-period level statistics.
//!
//! Day is `[07:00, 19:00)` local time. Night runs from `19:00` to `07:00`
//! the next morning and belongs to the calendar date on which it started.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::sync::Arc;

use chrono::{Duration, NaiveDate, NaiveDateTime, NaiveTime, Timelike};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{DayLabel, Modality, SensorSample, DATE_FORMAT};
use crate::par;
use crate::stats::{mean, percentile_sorted, population_std};

pub const DAY_START_HOUR: u32 = 7;
pub const NIGHT_START_HOUR: u32 = 19;

/// Names of the seven statistics, in feature-column order.
pub const STAT_NAMES: [&str; 7] = ["lmax", "lmin", "l99", "l90", "l50", "l10", "l1"];
/// Percentile levels of `l99..l1`.
const LEVELS: [f64; 5] = [99.0, 90.0, 50.0, 10.0, 1.0];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FeatureError {
    #[error("cannot summarise an empty period")]
    EmptyPeriod,
    #[error("no label for patient {patient} on {date}")]
    MissingLabel { patient: String, date: NaiveDate },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Period {
    Day,
    Night,
}

impl Period {
    pub const ALL: [Period; 2] = [Period::Day, Period::Night];

    pub fn as_str(self) -> &'static str {
        match self {
            Period::Day => "day",
            Period::Night => "night",
        }
    }
}

impl fmt::Display for Period {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MissingLabelPolicy {
    /// Fail on the first (patient, date) without a label.
    #[default]
    Strict,
    /// Silently drop days without a label.
    Drop,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct FeatureConfig {
    /// Read `LP` as the level exceeded P% of the time, i.e. the
    /// (100 - P)-th percentile. This reverses the order of `l99..l1`.
    pub exceedance_convention: bool,
    pub missing_label_policy: MissingLabelPolicy,
}

/// The seven level statistics of one period.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StatSet {
    pub lmax: f64,
    pub lmin: f64,
    pub l99: f64,
    pub l90: f64,
    pub l50: f64,
    pub l10: f64,
    pub l1: f64,
    pub n_samples: usize,
}

impl StatSet {
    /// Values in [`STAT_NAMES`] order.
    pub fn values(&self) -> [f64; 7] {
        [self.lmax, self.lmin, self.l99, self.l90, self.l50, self.l10, self.l1]
    }

    pub fn get(&self, stat: usize) -> f64 {
        self.values()[stat]
    }
}

pub fn assign_period(ts: NaiveDateTime) -> (NaiveDate, Period) {
    let hour = ts.hour();
    if hour < DAY_START_HOUR {
        (ts.date() - Duration::days(1), Period::Night)
    } else if hour < NIGHT_START_HOUR {
        (ts.date(), Period::Day)
    } else {
        (ts.date(), Period::Night)
    }
}

/// First instant of `period` on `date`.
pub fn period_start(date: NaiveDate, period: Period) -> NaiveDateTime {
    let hour = match period {
        Period::Day => DAY_START_HOUR,
        Period::Night => NIGHT_START_HOUR,
    };
    date.and_time(NaiveTime::from_hms_opt(hour, 0, 0).expect("valid hour"))
}

pub fn summarize_period(values: &[f64]) -> Result<StatSet, FeatureError> {
    summarize_period_with(values, &FeatureConfig::default())
}

pub fn summarize_period_with(values: &[f64], cfg: &FeatureConfig) -> Result<StatSet, FeatureError> {
    if values.is_empty() {
        return Err(FeatureError::EmptyPeriod);
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let level = |p: f64| {
        let p = if cfg.exceedance_convention { 100.0 - p } else { p };
        percentile_sorted(&sorted, p)
    };
    let [l99, l90, l50, l10, l1] = LEVELS.map(level);
    Ok(StatSet {
        lmax: sorted[sorted.len() - 1],
        lmin: sorted[0],
        l99,
        l90,
        l50,
        l10,
        l1,
        n_samples: sorted.len(),
    })
}

/// One patient-day with optional statistics per (modality, period).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientDayRecord {
    pub patient_id: String,
    pub date: NaiveDate,
    pub day_noise: Option<StatSet>,
    pub night_noise: Option<StatSet>,
    pub day_light: Option<StatSet>,
    pub night_light: Option<StatSet>,
    pub label: u8,
    pub noise_source: Option<String>,
    pub light_source: Option<String>,
}

impl PatientDayRecord {
    pub fn new(patient_id: impl Into<String>, date: NaiveDate, label: u8) -> Self {
        Self {
            patient_id: patient_id.into(),
            date,
            day_noise: None,
            night_noise: None,
            day_light: None,
            night_light: None,
            label,
            noise_source: None,
            light_source: None,
        }
    }

    pub fn stats(&self, modality: Modality, period: Period) -> Option<&StatSet> {
        match (modality, period) {
            (Modality::Noise, Period::Day) => self.day_noise.as_ref(),
            (Modality::Noise, Period::Night) => self.night_noise.as_ref(),
            (Modality::Light, Period::Day) => self.day_light.as_ref(),
            (Modality::Light, Period::Night) => self.night_light.as_ref(),
        }
    }

    pub fn stats_mut(&mut self, modality: Modality, period: Period) -> &mut Option<StatSet> {
        match (modality, period) {
            (Modality::Noise, Period::Day) => &mut self.day_noise,
            (Modality::Noise, Period::Night) => &mut self.night_noise,
            (Modality::Light, Period::Day) => &mut self.day_light,
            (Modality::Light, Period::Night) => &mut self.night_light,
        }
    }

    pub fn source(&self, modality: Modality) -> Option<&str> {
        match modality {
            Modality::Noise => self.noise_source.as_deref(),
            Modality::Light => self.light_source.as_deref(),
        }
    }

    pub fn has_modality(&self, modality: Modality) -> bool {
        Period::ALL.iter().any(|&p| self.stats(modality, p).is_some())
    }
}

#[derive(Default)]
struct DayBucket {
    values: HashMap<(Modality, Period), Vec<f64>>,
    sources: HashMap<Modality, Arc<str>>,
}

/// Groups samples into patient-days, summarises each period and attaches
/// the day's label. Output is sorted by (patient, date).
pub fn build_day_records(
    samples: &[SensorSample],
    labels: &[DayLabel],
    cfg: &FeatureConfig,
) -> Result<Vec<PatientDayRecord>, FeatureError> {
    let mut buckets: BTreeMap<(Arc<str>, NaiveDate), DayBucket> = BTreeMap::new();
    for s in samples {
        let (date, period) = assign_period(s.timestamp);
        let bucket = buckets.entry((s.patient_id.clone(), date)).or_default();
        bucket
            .values
            .entry((s.modality, period))
            .or_default()
            .push(s.value);
        let src = bucket.sources.entry(s.modality).or_insert_with(|| s.source.clone());
        if **src != *s.source {
            log::debug!(
                "patient {} on {date}: mixed {} sources, keeping {src}",
                s.patient_id,
                s.modality
            );
        }
    }

    let label_map: HashMap<(&str, NaiveDate), u8> = labels
        .iter()
        .map(|l| ((l.patient_id.as_str(), l.date), l.delirium))
        .collect();

    let mut keyed = Vec::with_capacity(buckets.len());
    for ((patient, date), bucket) in buckets {
        match label_map.get(&(&*patient, date)) {
            Some(&label) => keyed.push((patient, date, label, bucket)),
            None => match cfg.missing_label_policy {
                MissingLabelPolicy::Strict => {
                    return Err(FeatureError::MissingLabel {
                        patient: patient.to_string(),
                        date,
                    })
                }
                MissingLabelPolicy::Drop => {
                    log::info!("dropping {patient} {date}: no label");
                }
            },
        }
    }

    let records = par::map_slice(&keyed, |(patient, date, label, bucket)| {
        let mut rec = PatientDayRecord::new(patient.to_string(), *date, *label);
        for (&(modality, period), values) in &bucket.values {
            *rec.stats_mut(modality, period) =
                Some(summarize_period_with(values, cfg).expect("bucket holds at least one value"));
        }
        rec.noise_source = bucket.sources.get(&Modality::Noise).map(|s| s.to_string());
        rec.light_source = bucket.sources.get(&Modality::Light).map(|s| s.to_string());
        rec
    });
    Ok(records)
}

/// Mean and population standard deviation of one period's raw values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PeriodPoint {
    pub date: NaiveDate,
    pub period: Period,
    pub mean: f64,
    pub std: f64,
}

/// Per-(date, period) mean and std of a single patient's single-modality
/// stream, in chronological order. Empty periods are omitted.
pub fn period_summary_series(samples: &[SensorSample]) -> Vec<PeriodPoint> {
    let mut groups: BTreeMap<(NaiveDate, Period), Vec<f64>> = BTreeMap::new();
    for s in samples {
        groups.entry(assign_period(s.timestamp)).or_default().push(s.value);
    }
    groups
        .into_iter()
        .map(|((date, period), v)| PeriodPoint {
            date,
            period,
            mean: mean(&v),
            std: population_std(&v),
        })
        .collect()
}

/// Column name for one feature, e.g. `noise_night_lmax`.
pub fn feature_name(modality: Modality, period: Period, stat: usize) -> String {
    format!("{}_{}_{}", modality.as_str(), period.as_str(), STAT_NAMES[stat])
}

/// Feature table: `patient_id,date,label`, the 28 statistics, then the
/// per-modality source tags. Absent periods leave empty cells.
pub fn records_to_csv(records: &[PatientDayRecord]) -> String {
    let mut header = vec!["patient_id".to_string(), "date".into(), "label".into()];
    for m in Modality::ALL {
        for p in Period::ALL {
            for s in 0..STAT_NAMES.len() {
                header.push(feature_name(m, p, s));
            }
        }
    }
    header.push("noise_source".into());
    header.push("light_source".into());

    let mut out = header.join(",");
    out.push('\n');
    for r in records {
        let mut row = vec![
            r.patient_id.clone(),
            r.date.format(DATE_FORMAT).to_string(),
            r.label.to_string(),
        ];
        for m in Modality::ALL {
            for p in Period::ALL {
                match r.stats(m, p) {
                    Some(st) => row.extend(st.values().iter().map(|v| v.to_string())),
                    None => row.extend(std::iter::repeat_n(String::new(), STAT_NAMES.len())),
                }
            }
        }
        row.push(r.noise_source.clone().unwrap_or_default());
        row.push(r.light_source.clone().unwrap_or_default());
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::TIMESTAMP_FORMAT;
    use proptest::prelude::*;

    fn dt(s: &str) -> NaiveDateTime {
        NaiveDateTime::parse_from_str(s, TIMESTAMP_FORMAT).unwrap()
    }

    fn date(s: &str) -> NaiveDate {
        NaiveDate::parse_from_str(s, DATE_FORMAT).unwrap()
    }

    fn sample(p: &str, ts: &str, m: Modality, v: f64) -> SensorSample {
        SensorSample {
            patient_id: Arc::from(p),
            timestamp: dt(ts),
            modality: m,
            value: v,
            source: Arc::from("PAIN"),
        }
    }

    #[test]
    fn period_boundaries() {
        assert_eq!(
            assign_period(dt("2021-06-01T06:59:59")),
            (date("2021-05-31"), Period::Night)
        );
        assert_eq!(
            assign_period(dt("2021-06-01T07:00:00")),
            (date("2021-06-01"), Period::Day)
        );
        assert_eq!(
            assign_period(dt("2021-06-01T18:59:59")),
            (date("2021-06-01"), Period::Day)
        );
        assert_eq!(
            assign_period(dt("2021-06-01T19:00:00")),
            (date("2021-06-01"), Period::Night)
        );
        assert_eq!(
            assign_period(dt("2021-06-01T00:00:00")),
            (date("2021-05-31"), Period::Night)
        );
    }

    #[test]
    fn periods_tile_the_day() {
        // every second of 2021-06-02 from 07:00 to 07:00 next day
        let start = dt("2021-06-02T07:00:00");
        let mut day = 0;
        let mut night = 0;
        for s in 0..86_400 {
            let (d, p) = assign_period(start + Duration::seconds(s));
            assert_eq!(d, date("2021-06-02"));
            match p {
                Period::Day => day += 1,
                Period::Night => night += 1,
            }
        }
        assert_eq!((day, night), (43_200, 43_200));
    }

    #[test]
    fn single_value_stats() {
        let s = summarize_period(&[5.0]).unwrap();
        assert!(s.values().iter().all(|&v| v == 5.0));
        assert_eq!(s.n_samples, 1);
        assert_eq!(summarize_period(&[]), Err(FeatureError::EmptyPeriod));
    }

    #[test]
    fn hundred_values() {
        // brute-force reference: sort, h = (n-1)p, interpolate
        let v: Vec<f64> = (1..=100).rev().map(f64::from).collect();
        let reference = |p: f64| {
            let mut s = v.clone();
            s.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let h = 99.0 * p;
            let lo = h.floor() as usize;
            s[lo] + (h - lo as f64) * (s[(lo + 1).min(99)] - s[lo])
        };
        let st = summarize_period(&v).unwrap();
        assert_eq!(st.l50, 50.5);
        assert!((st.l90 - 90.1).abs() < 1e-12);
        assert_eq!(st.lmax, 100.0);
        assert_eq!(st.lmin, 1.0);
        assert!((st.l99 - reference(0.99)).abs() < 1e-12);
        assert!((st.l10 - reference(0.10)).abs() < 1e-12);
        assert!((st.l1 - reference(0.01)).abs() < 1e-12);
    }

    #[test]
    fn exceedance_convention_mirrors_levels() {
        let v: Vec<f64> = (1..=100).map(f64::from).collect();
        let plain = summarize_period(&v).unwrap();
        let cfg = FeatureConfig {
            exceedance_convention: true,
            ..Default::default()
        };
        let exc = summarize_period_with(&v, &cfg).unwrap();
        assert_eq!(exc.l10, plain.l90);
        assert_eq!(exc.l90, plain.l10);
        assert_eq!(exc.l50, plain.l50);
        assert_eq!(exc.lmax, plain.lmax);
    }

    fn labels(pairs: &[(&str, &str, u8)]) -> Vec<DayLabel> {
        pairs
            .iter()
            .map(|(p, d, l)| DayLabel {
                patient_id: p.to_string(),
                date: date(d),
                delirium: *l,
            })
            .collect()
    }

    #[test]
    fn four_records_from_two_by_two() {
        let mut samples = Vec::new();
        for p in ["P1", "P2"] {
            for d in ["2021-06-01", "2021-06-02"] {
                samples.push(sample(p, &format!("{d}T10:00:00"), Modality::Noise, 60.0));
                samples.push(sample(p, &format!("{d}T21:00:00"), Modality::Noise, 55.0));
            }
        }
        let l = labels(&[
            ("P1", "2021-06-01", 0),
            ("P1", "2021-06-02", 1),
            ("P2", "2021-06-01", 0),
            ("P2", "2021-06-02", 0),
        ]);
        let recs = build_day_records(&samples, &l, &FeatureConfig::default()).unwrap();
        assert_eq!(recs.len(), 4);
        assert_eq!(recs[1].label, 1);
        assert!(recs.iter().all(|r| r.day_noise.is_some() && r.night_noise.is_some()));
        assert!(recs.iter().all(|r| r.day_light.is_none()));
        assert_eq!(recs[0].noise_source.as_deref(), Some("PAIN"));
    }

    #[test]
    fn early_morning_goes_to_previous_night() {
        let samples = vec![sample("P1", "2021-06-05T03:00:00", Modality::Light, 4.0)];
        let l = labels(&[("P1", "2021-06-04", 1)]);
        let recs = build_day_records(&samples, &l, &FeatureConfig::default()).unwrap();
        assert_eq!(recs.len(), 1);
        assert_eq!(recs[0].date, date("2021-06-04"));
        assert!(recs[0].night_light.is_some());
        assert!(recs[0].day_light.is_none() && recs[0].day_noise.is_none());
    }

    #[test]
    fn missing_label_policies() {
        let samples = vec![sample("P1", "2021-06-05T10:00:00", Modality::Noise, 60.0)];
        assert_eq!(
            build_day_records(&samples, &[], &FeatureConfig::default()),
            Err(FeatureError::MissingLabel {
                patient: "P1".into(),
                date: date("2021-06-05")
            })
        );
        let cfg = FeatureConfig {
            missing_label_policy: MissingLabelPolicy::Drop,
            ..Default::default()
        };
        assert!(build_day_records(&samples, &[], &cfg).unwrap().is_empty());
    }

    #[test]
    fn series_examples() {
        let constant: Vec<_> = (0..10)
            .map(|i| sample("P1", &format!("2021-06-01T{:02}:00:00", 8 + i), Modality::Noise, 60.0))
            .collect();
        let pts = period_summary_series(&constant);
        assert_eq!(pts.len(), 1);
        assert_eq!((pts[0].mean, pts[0].std), (60.0, 0.0));

        let two = vec![
            sample("P1", "2021-06-01T08:00:00", Modality::Noise, 1.0),
            sample("P1", "2021-06-01T09:00:00", Modality::Noise, 3.0),
        ];
        let pts = period_summary_series(&two);
        assert_eq!((pts[0].mean, pts[0].std), (2.0, 1.0));

        let mut span = Vec::new();
        for d in ["2021-06-01", "2021-06-02"] {
            span.push(sample("P1", &format!("{d}T08:00:00"), Modality::Noise, 60.0));
            span.push(sample("P1", &format!("{d}T22:00:00"), Modality::Noise, 50.0));
        }
        let pts = period_summary_series(&span);
        assert_eq!(pts.len(), 4);
        assert_eq!(pts[1].period, Period::Night);
    }

    #[test]
    fn feature_csv_has_28_stat_columns() {
        let mut r = PatientDayRecord::new("P1", date("2021-06-01"), 1);
        r.day_noise = Some(summarize_period(&[1.0, 2.0]).unwrap());
        r.noise_source = Some("ADAPT".into());
        let csv = records_to_csv(&[r]);
        let mut lines = csv.lines();
        let header: Vec<&str> = lines.next().unwrap().split(',').collect();
        assert_eq!(header.len(), 3 + 28 + 2);
        assert_eq!(header[3], "noise_day_lmax");
        assert_eq!(header[30], "light_night_l1");
        let row: Vec<&str> = lines.next().unwrap().split(',').collect();
        assert_eq!(row.len(), header.len());
        assert_eq!(row[3], "2");
        assert_eq!(row[10], "");
        assert_eq!(row[31], "ADAPT");
    }

    fn ordered(s: &StatSet) -> bool {
        s.lmin <= s.l1 && s.l1 <= s.l10 && s.l10 <= s.l50 && s.l50 <= s.l90 && s.l90 <= s.l99 && s.l99 <= s.lmax
    }

    proptest! {
        #[test]
        fn monotone(v in prop::collection::vec(-1e6f64..1e6, 1..300)) {
            prop_assert!(ordered(&summarize_period(&v).unwrap()));
        }

        #[test]
        fn permutation_invariant(v in prop::collection::vec(-1e3f64..1e3, 1..100), seed in any::<u64>()) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let mut shuffled = v.clone();
            shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            prop_assert_eq!(summarize_period(&v).unwrap(), summarize_period(&shuffled).unwrap());
        }

        #[test]
        fn scale_equivariant(v in prop::collection::vec(-100f64..100.0, 1..100),
                             a in 0.01f64..50.0, b in -100f64..100.0) {
            let base = summarize_period(&v).unwrap().values();
            let moved: Vec<f64> = v.iter().map(|x| a * x + b).collect();
            let got = summarize_period(&moved).unwrap().values();
            for (g, e) in got.iter().zip(base.iter()) {
                prop_assert!((g - (a * e + b)).abs() <= 1e-9 * (1.0 + (a * e + b).abs()));
            }
        }

        #[test]
        fn partition(secs in 0i64..(3 * 365 * 86_400)) {
            let ts = dt("2021-01-01T00:00:00") + Duration::seconds(secs);
            let (d, p) = assign_period(ts);
            let start = period_start(d, p);
            prop_assert!(start <= ts && ts < start + Duration::hours(12));
        }
    }
}
