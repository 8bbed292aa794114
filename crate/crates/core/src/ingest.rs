//! Sensor and label CSV ingestion.
//!
//! Sensor files carry one reading per row:
//!
//! ```text
//! patient_id,timestamp,modality,value,source
//! P009,2021-06-01T07:00:00,noise,64.5,PAIN
//! ```
//!
//! Timestamps are naive local wall-clock time. Label files carry one daily
//! outcome per row (`patient_id,date,delirium`).

use std::borrow::Borrow;
use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use chrono::{NaiveDate, NaiveDateTime};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const SENSOR_HEADER: [&str; 5] = ["patient_id", "timestamp", "modality", "value", "source"];
pub const LABEL_HEADER: [&str; 3] = ["patient_id", "date", "delirium"];
pub const TIMESTAMP_FORMAT: &str = "%Y-%m-%dT%H:%M:%S";
pub const DATE_FORMAT: &str = "%Y-%m-%d";

/// Row numbers in errors are 1-based data rows (the header is row 0).
#[derive(Debug, Error, Clone, PartialEq)]
pub enum IngestError {
    #[error("malformed header: expected `{expected}`, found `{found}`")]
    MalformedHeader { expected: String, found: String },
    #[error("row {0}: bad timestamp")]
    BadTimestamp(usize),
    #[error("row {0}: bad date")]
    BadDate(usize),
    #[error("row {0}: negative value")]
    NegativeValue(usize),
    #[error("row {0}: value is not a finite number")]
    BadValue(usize),
    #[error("row {0}: unknown modality")]
    UnknownModality(usize),
    #[error("row {0}: delirium must be 0 or 1")]
    BadBinary(usize),
    #[error("duplicate label for patient {patient} on {date}")]
    DuplicateLabel { patient: String, date: NaiveDate },
    #[error("row {row}: {message}")]
    BadRecord { row: usize, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    Noise,
    Light,
}

impl Modality {
    pub const ALL: [Modality; 2] = [Modality::Noise, Modality::Light];

    pub fn as_str(self) -> &'static str {
        match self {
            Modality::Noise => "noise",
            Modality::Light => "light",
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Modality {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.eq_ignore_ascii_case("noise") {
            Ok(Modality::Noise)
        } else if s.eq_ignore_ascii_case("light") {
            Ok(Modality::Light)
        } else {
            Err(())
        }
    }
}

/// One time-stamped ambient reading: dB SPL for noise, lux for light.
///
/// Patient and source tags are reference-counted and shared between all
/// samples that carry the same string.
#[derive(Debug, Clone, PartialEq)]
pub struct SensorSample {
    pub patient_id: Arc<str>,
    pub timestamp: NaiveDateTime,
    pub modality: Modality,
    pub value: f64,
    pub source: Arc<str>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DayLabel {
    pub patient_id: String,
    pub date: NaiveDate,
    pub delirium: u8,
}

#[derive(Default)]
struct Interner(HashSet<Arc<str>>);

impl Interner {
    fn get(&mut self, s: &str) -> Arc<str> {
        if let Some(existing) = self.0.get(s) {
            return existing.clone();
        }
        let arc: Arc<str> = Arc::from(s);
        self.0.insert(arc.clone());
        arc
    }
}

fn check_header(found: &csv::StringRecord, expected: &[&str]) -> Result<(), IngestError> {
    let ok = found.len() == expected.len()
        && found.iter().zip(expected).all(|(f, e)| f.trim() == *e);
    if ok {
        Ok(())
    } else {
        Err(IngestError::MalformedHeader {
            expected: expected.join(","),
            found: found.iter().collect::<Vec<_>>().join(","),
        })
    }
}

fn reader(bytes: &[u8]) -> csv::Reader<&[u8]> {
    csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_reader(bytes)
}

fn record_error(row: usize, err: csv::Error) -> IngestError {
    IngestError::BadRecord {
        row,
        message: err.to_string(),
    }
}

pub fn parse_sensor_csv(bytes: &[u8]) -> Result<Vec<SensorSample>, IngestError> {
    let mut rdr = reader(bytes);
    let header = rdr.headers().map_err(|e| record_error(0, e))?.clone();
    check_header(&header, &SENSOR_HEADER)?;

    let mut interner = Interner::default();
    let mut out = Vec::new();
    let mut record = csv::StringRecord::new();
    let mut row = 0;
    loop {
        row += 1;
        match rdr.read_record(&mut record) {
            Ok(true) => {}
            Ok(false) => break,
            Err(e) => return Err(record_error(row, e)),
        }
        let timestamp = NaiveDateTime::parse_from_str(record[1].trim(), TIMESTAMP_FORMAT)
            .map_err(|_| IngestError::BadTimestamp(row))?;
        let modality: Modality = record[2]
            .trim()
            .parse()
            .map_err(|_| IngestError::UnknownModality(row))?;
        let value: f64 = record[3]
            .trim()
            .parse()
            .map_err(|_| IngestError::BadValue(row))?;
        if !value.is_finite() {
            return Err(IngestError::BadValue(row));
        }
        if value < 0.0 {
            return Err(IngestError::NegativeValue(row));
        }
        out.push(SensorSample {
            patient_id: interner.get(record[0].trim()),
            timestamp,
            modality,
            value,
            source: interner.get(record[4].trim()),
        });
    }
    Ok(out)
}

pub fn parse_label_csv(bytes: &[u8]) -> Result<Vec<DayLabel>, IngestError> {
    let mut rdr = reader(bytes);
    let header = rdr.headers().map_err(|e| record_error(0, e))?.clone();
    check_header(&header, &LABEL_HEADER)?;

    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 1;
        let rec = rec.map_err(|e| record_error(row, e))?;
        let patient_id = rec[0].trim().to_string();
        let date = NaiveDate::parse_from_str(rec[1].trim(), DATE_FORMAT)
            .map_err(|_| IngestError::BadDate(row))?;
        let delirium = match rec[2].trim() {
            "0" => 0,
            "1" => 1,
            _ => return Err(IngestError::BadBinary(row)),
        };
        if !seen.insert((patient_id.clone(), date)) {
            return Err(IngestError::DuplicateLabel {
                patient: patient_id,
                date,
            });
        }
        out.push(DayLabel {
            patient_id,
            date,
            delirium,
        });
    }
    Ok(out)
}

pub fn write_sensor_csv<S: Borrow<SensorSample>>(samples: &[S]) -> Vec<u8> {
    let mut out = String::with_capacity(samples.len() * 40 + 64);
    out.push_str(&SENSOR_HEADER.join(","));
    out.push('\n');
    for s in samples {
        let s = s.borrow();
        push_sensor_row(&mut out, &s.patient_id, s.timestamp, s.modality, s.value, &s.source);
    }
    out.into_bytes()
}

/// Appends one sensor CSV row. `f64` display output round-trips exactly.
pub fn push_sensor_row(
    out: &mut String,
    patient_id: &str,
    timestamp: NaiveDateTime,
    modality: Modality,
    value: f64,
    source: &str,
) {
    use std::fmt::Write;
    let _ = writeln!(
        out,
        "{},{},{},{},{}",
        patient_id,
        timestamp.format(TIMESTAMP_FORMAT),
        modality,
        value,
        source
    );
}

pub fn write_label_csv(labels: &[DayLabel]) -> Vec<u8> {
    let mut out = LABEL_HEADER.join(",");
    out.push('\n');
    for l in labels {
        out.push_str(&format!(
            "{},{},{}\n",
            l.patient_id,
            l.date.format(DATE_FORMAT),
            l.delirium
        ));
    }
    out.into_bytes()
}

/// Summary of one (patient, modality, source) stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamGroup {
    pub patient_id: String,
    pub modality: Modality,
    pub source: String,
    pub count: u64,
    pub first: NaiveDateTime,
    pub last: NaiveDateTime,
    /// Samples whose timestamp repeats an earlier sample in the same group.
    pub duplicate_timestamps: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct StreamReport {
    pub total_samples: u64,
    pub groups: Vec<StreamGroup>,
}

impl StreamReport {
    pub fn patient_count(&self) -> usize {
        self.groups
            .iter()
            .map(|g| g.patient_id.as_str())
            .collect::<HashSet<_>>()
            .len()
    }
}

/// Per-stream counts, time spans and duplicate timestamps. Report only;
/// nothing is filtered.
pub fn validate_streams<I, S>(samples: I) -> StreamReport
where
    I: IntoIterator<Item = S>,
    S: Borrow<SensorSample>,
{
    let mut interned: HashMap<(Arc<str>, Modality, Arc<str>), Vec<i64>> = HashMap::new();
    let mut total = 0u64;
    for s in samples {
        let s = s.borrow();
        total += 1;
        interned
            .entry((s.patient_id.clone(), s.modality, s.source.clone()))
            .or_default()
            .push(s.timestamp.and_utc().timestamp());
    }
    let keyed: BTreeMap<(String, Modality, String), Vec<i64>> = interned
        .into_iter()
        .map(|((p, m, s), ts)| ((p.to_string(), m, s.to_string()), ts))
        .collect();

    let groups = keyed
        .into_iter()
        .map(|((patient_id, modality, source), mut ts)| {
            ts.sort_unstable();
            let duplicates = ts.windows(2).filter(|w| w[0] == w[1]).count() as u64;
            let to_dt = |secs: i64| {
                chrono::DateTime::from_timestamp(secs, 0)
                    .expect("timestamp came from a valid datetime")
                    .naive_utc()
            };
            StreamGroup {
                patient_id,
                modality,
                source,
                count: ts.len() as u64,
                first: to_dt(ts[0]),
                last: to_dt(ts[ts.len() - 1]),
                duplicate_timestamps: duplicates,
            }
        })
        .collect();
    StreamReport {
        total_samples: total,
        groups,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn dt(s: &str) -> NaiveDateTime {
        NaiveDateTime::parse_from_str(s, TIMESTAMP_FORMAT).unwrap()
    }

    #[test]
    fn parses_plausible_reading() {
        let csv = b"patient_id,timestamp,modality,value,source\nP009,2021-06-01T07:00:00,noise,64.5,PAIN\n";
        let s = parse_sensor_csv(csv).unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!(&*s[0].patient_id, "P009");
        assert_eq!(s[0].timestamp, dt("2021-06-01T07:00:00"));
        assert_eq!(s[0].modality, Modality::Noise);
        assert_eq!(s[0].value, 64.5);
        assert_eq!(&*s[0].source, "PAIN");
    }

    #[test]
    fn sensor_errors() {
        let h = "patient_id,timestamp,modality,value,source\n";
        let neg = format!("{h}P1,2021-06-01T07:00:00,noise,1,A\nP1,2021-06-01T07:00:01,noise,-1,A\n");
        assert_eq!(parse_sensor_csv(neg.as_bytes()), Err(IngestError::NegativeValue(2)));
        let ts = format!("{h}P1,2021-06-01 07:00,noise,1,A\n");
        assert_eq!(parse_sensor_csv(ts.as_bytes()), Err(IngestError::BadTimestamp(1)));
        let tz = format!("{h}P1,2021-06-01T07:00:00+02:00,noise,1,A\n");
        assert_eq!(parse_sensor_csv(tz.as_bytes()), Err(IngestError::BadTimestamp(1)));
        let m = format!("{h}P1,2021-06-01T07:00:00,sound,1,A\n");
        assert_eq!(parse_sensor_csv(m.as_bytes()), Err(IngestError::UnknownModality(1)));
        let nan = format!("{h}P1,2021-06-01T07:00:00,light,NaN,A\n");
        assert_eq!(parse_sensor_csv(nan.as_bytes()), Err(IngestError::BadValue(1)));
        assert!(matches!(
            parse_sensor_csv(b"patient,timestamp,modality,value,source\n"),
            Err(IngestError::MalformedHeader { .. })
        ));
    }

    #[test]
    fn empty_body_and_case_insensitive_modality() {
        assert!(parse_sensor_csv(b"patient_id,timestamp,modality,value,source\n")
            .unwrap()
            .is_empty());
        let csv = b"patient_id,timestamp,modality,value,source\nP1,2021-06-01T07:00:00,Light,3,A\nP1,2021-06-01T07:00:00,NOISE,3,A\n";
        let s = parse_sensor_csv(csv).unwrap();
        assert_eq!(s[0].modality, Modality::Light);
        assert_eq!(s[1].modality, Modality::Noise);
    }

    #[test]
    fn labels() {
        let ok = b"patient_id,date,delirium\nP009,2021-06-01,1\n";
        assert_eq!(
            parse_label_csv(ok).unwrap(),
            vec![DayLabel {
                patient_id: "P009".into(),
                date: NaiveDate::from_ymd_opt(2021, 6, 1).unwrap(),
                delirium: 1
            }]
        );
        let dup = b"patient_id,date,delirium\nP009,2021-06-01,1\nP009,2021-06-01,0\n";
        assert!(matches!(parse_label_csv(dup), Err(IngestError::DuplicateLabel { .. })));
        let bad = b"patient_id,date,delirium\nP009,2021-06-01,2\n";
        assert_eq!(parse_label_csv(bad), Err(IngestError::BadBinary(1)));
    }

    #[test]
    fn report_groups_and_duplicates() {
        let csv = b"patient_id,timestamp,modality,value,source\n\
P1,2021-06-01T07:00:00,noise,60,A\n\
P1,2021-06-01T07:00:00,noise,61,A\n\
P2,2021-06-01T08:00:00,noise,62,A\n";
        let samples = parse_sensor_csv(csv).unwrap();
        let report = validate_streams(&samples);
        assert_eq!(report.patient_count(), 2);
        assert_eq!(report.groups.len(), 2);
        assert_eq!(report.groups[0].duplicate_timestamps, 1);
        assert_eq!(report.groups[0].count, 2);
        assert_eq!(samples.len(), 3);
    }

    #[test]
    fn report_counts_cohort_scale_stream() {
        // 7.38e6 day-time readings, generated lazily
        let patient: Arc<str> = Arc::from("P009");
        let source: Arc<str> = Arc::from("PAIN");
        let start = dt("2021-06-01T07:00:00");
        let n = 7_380_000i64;
        let iter = (0..n).map(|i| SensorSample {
            patient_id: patient.clone(),
            timestamp: start + chrono::Duration::seconds(i),
            modality: Modality::Noise,
            value: 64.5,
            source: source.clone(),
        });
        let report = validate_streams(iter);
        assert_eq!(report.groups[0].count, 7_380_000);
        assert_eq!(report.total_samples, 7_380_000);
    }

    fn sample_strategy() -> impl Strategy<Value = (String, i64, bool, f64, String)> {
        (
            "[A-Z][0-9]{1,3}",
            0i64..200_000_000,
            any::<bool>(),
            0.0f64..1.0e5,
            "[A-Z]{2,6}",
        )
    }

    proptest! {
        #[test]
        fn csv_round_trip(rows in prop::collection::vec(sample_strategy(), 0..40)) {
            let base = dt("2020-01-01T00:00:00");
            let samples: Vec<SensorSample> = rows
                .into_iter()
                .map(|(p, secs, noise, value, src)| SensorSample {
                    patient_id: Arc::from(p.as_str()),
                    timestamp: base + chrono::Duration::seconds(secs),
                    modality: if noise { Modality::Noise } else { Modality::Light },
                    value,
                    source: Arc::from(src.as_str()),
                })
                .collect();
            let bytes = write_sensor_csv(&samples);
            let parsed = parse_sensor_csv(&bytes).unwrap();
            prop_assert_eq!(parsed, samples);
        }
    }
}
