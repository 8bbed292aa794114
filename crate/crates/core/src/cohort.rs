//! Patient-level train/test cohorts.
//!
//! Patients, not days, are the unit of the split. Min-max scalers are fitted
//! on the training patients only, separately for every
//! (source, modality, period, statistic) key, and applied to both sides.
//! Each patient becomes one 7-day sequence with all-zero padding rows and a
//! single majority label.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{feature_name, PatientDayRecord, Period, STAT_NAMES};
use crate::ingest::Modality;
use crate::{par, SEQ_LEN};

pub const COHORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CohortError {
    #[error("need at least 2 distinct patients, got {0}")]
    TooFewPatients(usize),
    #[error("test fraction must lie in (0, 1), got {0}")]
    BadFraction(f64),
    #[error("no labels to take a majority over")]
    EmptyLabels,
    #[error("no fitted scaler for {0}")]
    MissingScaler(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModalitySelection {
    NoiseOnly,
    LightOnly,
    Combined,
}

impl ModalitySelection {
    pub fn modalities(self) -> &'static [Modality] {
        match self {
            ModalitySelection::NoiseOnly => &[Modality::Noise],
            ModalitySelection::LightOnly => &[Modality::Light],
            ModalitySelection::Combined => &Modality::ALL,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ModalitySelection::NoiseOnly => "noise_only",
            ModalitySelection::LightOnly => "light_only",
            ModalitySelection::Combined => "combined",
        }
    }
}

/// One input column: modality, period and index into [`STAT_NAMES`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FeatureKey {
    pub modality: Modality,
    pub period: Period,
    pub stat: usize,
}

impl FeatureKey {
    pub fn name(&self) -> String {
        feature_name(self.modality, self.period, self.stat)
    }
}

/// Column layout for a selection: modality, then period, then statistic.
pub fn feature_columns(selection: ModalitySelection) -> Vec<FeatureKey> {
    let mut cols = Vec::new();
    for &modality in selection.modalities() {
        for period in Period::ALL {
            for stat in 0..STAT_NAMES.len() {
                cols.push(FeatureKey {
                    modality,
                    period,
                    stat,
                });
            }
        }
    }
    cols
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalerParams {
    pub source: String,
    pub modality: Modality,
    pub period: Period,
    pub stat: String,
    pub min: f64,
    pub max: f64,
    /// `max == min`; every value maps to 0.5.
    pub degenerate: bool,
}

impl ScalerParams {
    fn key_string(&self) -> String {
        format!(
            "{}/{}/{}/{}",
            self.source, self.modality, self.period, self.stat
        )
    }
}

pub fn apply_scaler(value: f64, params: &ScalerParams) -> f64 {
    if params.degenerate {
        return 0.5;
    }
    ((value - params.min) / (params.max - params.min)).clamp(0.0, 1.0)
}

/// Min/max per (source, modality, period, statistic) over the given
/// records. Output is sorted by key.
pub fn fit_scalers(train_records: &[PatientDayRecord]) -> Vec<ScalerParams> {
    let mut acc: BTreeMap<(String, Modality, Period, usize), (f64, f64)> = BTreeMap::new();
    for r in train_records {
        for modality in Modality::ALL {
            let Some(source) = r.source(modality) else {
                continue;
            };
            for period in Period::ALL {
                let Some(stats) = r.stats(modality, period) else {
                    continue;
                };
                for (stat, v) in stats.values().into_iter().enumerate() {
                    let e = acc
                        .entry((source.to_string(), modality, period, stat))
                        .or_insert((f64::INFINITY, f64::NEG_INFINITY));
                    e.0 = e.0.min(v);
                    e.1 = e.1.max(v);
                }
            }
        }
    }
    acc.into_iter()
        .map(|((source, modality, period, stat), (min, max))| ScalerParams {
            source,
            modality,
            period,
            stat: STAT_NAMES[stat].to_string(),
            min,
            max,
            degenerate: max == min,
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MajorityLabel {
    pub label: u8,
    /// Equal counts; resolved to 1.
    pub tie: bool,
}

pub fn majority_label(labels: &[u8]) -> Result<MajorityLabel, CohortError> {
    if labels.is_empty() {
        return Err(CohortError::EmptyLabels);
    }
    let ones = labels.iter().filter(|&&l| l == 1).count();
    let zeros = labels.len() - ones;
    let tie = ones == zeros;
    if tie {
        log::warn!("majority label tie over {} days, using 1", labels.len());
    }
    Ok(MajorityLabel {
        label: u8::from(ones >= zeros),
        tie,
    })
}

/// Distinct patient ids, shuffled with `seed`, with the first
/// `round(test_fraction * n)` (at least one, at most n - 1) going to test.
/// Both returned lists are sorted.
pub fn split_patients(
    records: &[PatientDayRecord],
    test_fraction: f64,
    seed: u64,
) -> Result<(Vec<String>, Vec<String>), CohortError> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(CohortError::BadFraction(test_fraction));
    }
    let ids: BTreeSet<&str> = records.iter().map(|r| r.patient_id.as_str()).collect();
    let n = ids.len();
    if n < 2 {
        return Err(CohortError::TooFewPatients(n));
    }
    let mut ids: Vec<String> = ids.into_iter().map(str::to_string).collect();
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_test = ((test_fraction * n as f64).round() as usize).clamp(1, n - 1);
    let mut test = ids.split_off(ids.len() - n_test);
    let mut train = ids;
    train.sort();
    test.sort();
    Ok((train, test))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientSequence {
    pub patient_id: String,
    /// `SEQ_LEN` rows of `F` scaled features.
    pub features: Vec<Vec<f64>>,
    pub valid_days: usize,
    pub label: u8,
    #[serde(default)]
    pub label_tie: bool,
}

impl PatientSequence {
    pub fn n_features(&self) -> usize {
        self.features.first().map_or(0, Vec::len)
    }

    /// Row-major `SEQ_LEN x F` copy of the features.
    pub fn flat(&self) -> Vec<f64> {
        self.features.iter().flatten().copied().collect()
    }
}

/// Builds one sequence per patient. Days are sorted and truncated to the
/// first `SEQ_LEN`; days without any selected modality are skipped; absent
/// periods are imputed as 0 after scaling. The combined selection drops
/// patients that lack either modality.
pub fn assemble_sequences(
    records: &[PatientDayRecord],
    scalers: &[ScalerParams],
    selection: ModalitySelection,
) -> Result<Vec<PatientSequence>, CohortError> {
    let lookup: BTreeMap<(&str, Modality, Period, &str), &ScalerParams> = scalers
        .iter()
        .map(|s| ((s.source.as_str(), s.modality, s.period, s.stat.as_str()), s))
        .collect();
    let columns = feature_columns(selection);

    let mut by_patient: BTreeMap<&str, Vec<&PatientDayRecord>> = BTreeMap::new();
    for r in records {
        if selection.modalities().iter().any(|&m| r.has_modality(m)) {
            by_patient.entry(r.patient_id.as_str()).or_default().push(r);
        }
    }
    let patients: Vec<(&str, Vec<&PatientDayRecord>)> = by_patient
        .into_iter()
        .filter_map(|(id, mut days)| {
            if selection == ModalitySelection::Combined
                && !Modality::ALL
                    .iter()
                    .all(|&m| days.iter().any(|d| d.has_modality(m)))
            {
                log::debug!("combined cohort: dropping {id}, one modality missing");
                return None;
            }
            days.sort_by_key(|d| d.date);
            if days.len() > SEQ_LEN {
                log::info!("{id}: truncating {} days to {SEQ_LEN}", days.len());
                days.truncate(SEQ_LEN);
            }
            Some((id, days))
        })
        .collect();

    par::map_slice(&patients, |(id, days)| {
        let mut features = vec![vec![0.0; columns.len()]; SEQ_LEN];
        for (row, day) in features.iter_mut().zip(days) {
            for (cell, col) in row.iter_mut().zip(&columns) {
                let (Some(stats), Some(source)) =
                    (day.stats(col.modality, col.period), day.source(col.modality))
                else {
                    continue;
                };
                let key = (source, col.modality, col.period, STAT_NAMES[col.stat]);
                let params = lookup.get(&key).ok_or_else(|| {
                    CohortError::MissingScaler(format!(
                        "{source}/{}/{}/{}",
                        col.modality, col.period, STAT_NAMES[col.stat]
                    ))
                })?;
                *cell = apply_scaler(stats.get(col.stat), params);
            }
        }
        let labels: Vec<u8> = days.iter().map(|d| d.label).collect();
        let majority = majority_label(&labels)?;
        Ok(PatientSequence {
            patient_id: id.to_string(),
            features,
            valid_days: days.len(),
            label: majority.label,
            label_tie: majority.tie,
        })
    })
    .into_iter()
    .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CohortSplit {
    pub schema_version: u32,
    pub seed: u64,
    pub test_fraction: f64,
    pub selection: ModalitySelection,
    pub feature_names: Vec<String>,
    pub scalers: Vec<ScalerParams>,
    pub train: Vec<PatientSequence>,
    pub test: Vec<PatientSequence>,
}

impl CohortSplit {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("cohort split serialises")
    }

    pub fn from_json(s: &str) -> serde_json::Result<Self> {
        serde_json::from_str(s)
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }
}

/// Split, fit scalers on the training patients and assemble both sides.
/// Patients that the selection would drop (no selected modality in their
/// first `SEQ_LEN` days, or one modality missing under `Combined`) are
/// removed before the split so they never reach the scalers.
pub fn build_cohort(
    records: &[PatientDayRecord],
    selection: ModalitySelection,
    test_fraction: f64,
    seed: u64,
) -> Result<CohortSplit, CohortError> {
    let truncated = eligible(first_days(records), selection);
    let (train_ids, test_ids) = split_patients(&truncated, test_fraction, seed)?;
    let train_set: BTreeSet<&str> = train_ids.iter().map(String::as_str).collect();
    let test_set: BTreeSet<&str> = test_ids.iter().map(String::as_str).collect();

    let train_records: Vec<PatientDayRecord> = truncated
        .iter()
        .filter(|r| train_set.contains(r.patient_id.as_str()))
        .cloned()
        .collect();
    let test_records: Vec<PatientDayRecord> = truncated
        .iter()
        .filter(|r| test_set.contains(r.patient_id.as_str()))
        .cloned()
        .collect();

    let scalers = fit_scalers(&train_records);
    for s in scalers.iter().filter(|s| s.degenerate) {
        log::warn!("degenerate feature {}: mapped to 0.5", s.key_string());
    }
    let train = assemble_sequences(&train_records, &scalers, selection)?;
    let test = assemble_sequences(&test_records, &scalers, selection)?;
    Ok(CohortSplit {
        schema_version: COHORT_SCHEMA_VERSION,
        seed,
        test_fraction,
        selection,
        feature_names: feature_columns(selection).iter().map(FeatureKey::name).collect(),
        scalers,
        train,
        test,
    })
}

fn eligible(records: Vec<PatientDayRecord>, selection: ModalitySelection) -> Vec<PatientDayRecord> {
    let keep: BTreeSet<String> = selection
        .modalities()
        .iter()
        .map(|&m| {
            records
                .iter()
                .filter(|r| r.has_modality(m))
                .map(|r| r.patient_id.clone())
                .collect::<BTreeSet<String>>()
        })
        .reduce(|a, b| &a & &b)
        .unwrap_or_default();
    records.into_iter().filter(|r| keep.contains(&r.patient_id)).collect()
}

/// Keeps each patient's first `SEQ_LEN` days.
fn first_days(records: &[PatientDayRecord]) -> Vec<PatientDayRecord> {
    let mut by_patient: BTreeMap<&str, Vec<&PatientDayRecord>> = BTreeMap::new();
    for r in records {
        by_patient.entry(&r.patient_id).or_default().push(r);
    }
    by_patient
        .into_values()
        .flat_map(|mut days| {
            days.sort_by_key(|d| d.date);
            days.into_iter().take(SEQ_LEN).cloned()
        })
        .collect()
}
