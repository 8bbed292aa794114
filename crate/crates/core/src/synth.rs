//! Synthetic cohorts with day/night effects and a planted delirium signal.
//!
//! Noise readings are Gaussian and light readings log-normal. Each reading is
//! the sum of a per-patient offset, a per-period offset and within-period
//! scatter, with the scatter shrunk so that the marginal distribution keeps
//! the configured mean and spread. Every noise period also carries one loud
//! peak and one quiet trough whose heights have their own persistent
//! per-patient component (see [`PeakEvents`]). The shared offsets are kept
//! small, so the period extremes (Lmax, Lmin) vary largely on their own
//! rather than in lockstep with the other percentiles, and a label that
//! depends on them is identifiable from the features.
//!
//! Daily labels are Bernoulli draws with
//! `p = logistic(beta0 + sum_k beta_k * z_k)`, where `z_k` are the realised
//! day features standardised over the generated cohort.

use std::fmt;

use chrono::{Duration, NaiveDate, NaiveDateTime, NaiveTime};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;
use serde::{Deserialize, Serialize};

use crate::features::{summarize_period, Period, StatSet};
use crate::ingest::{push_sensor_row, write_label_csv, DayLabel, Modality, SENSOR_HEADER};
use crate::nets::sigmoid;
use crate::SEQ_LEN;

pub const SYNTH_SCHEMA_VERSION: u32 = 1;
pub const SOURCES: [&str; 2] = ["PAIN", "ADAPT"];
const PERIOD_SECONDS: i64 = 12 * 3600;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SynthError {
    #[error("invalid synth config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Gaussian {
    pub mean: f64,
    pub sd: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LogNormal {
    pub median: f64,
    pub sigma_log: f64,
}

/// One loud peak and one quiet trough per noise period, `z` within-period
/// standard deviations from the period mean. Their heights carry a
/// persistent per-patient offset (`patient_sd`, drawn separately for day and
/// night and for peaks and troughs) plus daily jitter (`day_sd`), so the
/// period extremes vary between patients without moving the bulk of the
/// distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PeakEvents {
    pub z: f64,
    pub patient_sd: f64,
    pub day_sd: f64,
}

impl Default for PeakEvents {
    fn default() -> Self {
        Self {
            z: 3.5,
            patient_sd: 2.0,
            day_sd: 1.0,
        }
    }
}

/// Logistic coefficients on standardised day features.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Signal {
    pub beta0: f64,
    pub night_noise_lmax: f64,
    pub day_noise_lmin: f64,
    pub day_light_l50: f64,
    pub night_light_l50: f64,
}

impl Default for Signal {
    fn default() -> Self {
        Self {
            beta0: -1.0,
            night_noise_lmax: 3.0,
            day_noise_lmin: -2.0,
            day_light_l50: 0.0,
            night_light_l50: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub n_patients: usize,
    /// Probability of a length of stay of 1..=7 days.
    pub los_weights: [f64; SEQ_LEN],
    pub noise_day: Gaussian,
    pub noise_night: Gaussian,
    pub light_day: LogNormal,
    pub light_night: LogNormal,
    pub samples_per_period: usize,
    /// Shared offsets, in dB for noise and in log units for light.
    pub noise_patient_sd: f64,
    pub noise_period_sd: f64,
    /// Peak and trough events added to every noise period.
    pub noise_events: Option<PeakEvents>,
    pub light_patient_sd_log: f64,
    pub light_period_sd_log: f64,
    pub signal: Signal,
    pub fraction_noise_only: f64,
    pub fraction_light_only: f64,
    pub start_date: NaiveDate,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_patients: 102,
            los_weights: [0.05, 0.18, 0.10, 0.09, 0.10, 0.13, 0.35],
            noise_day: Gaussian { mean: 64.5, sd: 7.56 },
            noise_night: Gaussian { mean: 62.9, sd: 7.4 },
            light_day: LogNormal {
                median: 200.0,
                sigma_log: 0.8,
            },
            light_night: LogNormal {
                median: 5.0,
                sigma_log: 1.0,
            },
            samples_per_period: 720,
            noise_patient_sd: 1.2,
            noise_period_sd: 0.9,
            noise_events: Some(PeakEvents::default()),
            light_patient_sd_log: 0.15,
            light_period_sd_log: 0.1,
            signal: Signal::default(),
            fraction_noise_only: 0.0,
            fraction_light_only: 0.0,
            start_date: NaiveDate::from_ymd_opt(2021, 1, 4).expect("valid date"),
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: &str| Err(SynthError::InvalidConfig(m.to_string()));
        if self.n_patients == 0 {
            return bad("n_patients must be >= 1");
        }
        if self.samples_per_period == 0 || self.samples_per_period > PERIOD_SECONDS as usize {
            return bad("samples_per_period must be in 1..=43200");
        }
        if self.los_weights.iter().any(|w| w.is_nan() || *w < 0.0) || (self.los_weights.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return bad("los_weights must be non-negative and sum to 1");
        }
        if !(self.noise_day.sd > 0.0 && self.noise_night.sd > 0.0) {
            return bad("noise sds must be > 0");
        }
        if !(self.light_day.sigma_log > 0.0 && self.light_night.sigma_log > 0.0) {
            return bad("light sigma_log must be > 0");
        }
        if !(self.light_day.median > 0.0 && self.light_night.median > 0.0) {
            return bad("light medians must be > 0");
        }
        for (shared, total, name) in [
            (self.noise_patient_sd, self.noise_day.sd.min(self.noise_night.sd), "noise"),
            (self.light_patient_sd_log, self.light_day.sigma_log.min(self.light_night.sigma_log), "light"),
        ] {
            let period = if name == "noise" {
                self.noise_period_sd
            } else {
                self.light_period_sd_log
            };
            if shared < 0.0 || period < 0.0 || shared.powi(2) + period.powi(2) >= total.powi(2) {
                return bad(&format!("{name} offsets must be >= 0 and smaller than the total spread"));
            }
        }
        let (a, b) = (self.fraction_noise_only, self.fraction_light_only);
        if !(a >= 0.0 && b >= 0.0 && a + b <= 1.0) {
            return bad("modality fractions must be >= 0 and sum to at most 1");
        }
        Ok(())
    }
}

/// Names of the four signal features, in [`Signal`] coefficient order.
pub const SIGNAL_FEATURES: [&str; 4] = [
    "noise_night_lmax",
    "noise_day_lmin",
    "light_day_l50",
    "light_night_l50",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub feature: String,
    pub mean: f64,
    pub sd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DayTruth {
    pub date: NaiveDate,
    /// Realised signal features, `None` for an absent modality.
    pub features: [Option<f64>; 4],
    pub logit: f64,
    pub probability: f64,
    pub label: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientTruth {
    pub patient_id: String,
    pub los_days: usize,
    pub source: String,
    pub modalities: Vec<Modality>,
    pub days: Vec<DayTruth>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthManifest {
    pub schema_version: u32,
    pub config: SynthConfig,
    pub standardization: Vec<Standardization>,
    pub patients: Vec<PatientTruth>,
}

pub struct SynthOutput {
    pub sensor_csv: Vec<u8>,
    pub label_csv: Vec<u8>,
    pub manifest: SynthManifest,
}

impl fmt::Debug for SynthOutput {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SynthOutput")
            .field("sensor_csv_bytes", &self.sensor_csv.len())
            .field("label_csv_bytes", &self.label_csv.len())
            .field("patients", &self.manifest.patients.len())
            .finish()
    }
}

pub fn patient_id(index: usize, n_patients: usize) -> String {
    let width = n_patients.to_string().len().max(3);
    format!("P{:0width$}", index + 1)
}

fn round_centi(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

/// Rounds and writes one period of readings, spaced evenly over 12 hours,
/// and returns its level statistics.
fn emit_period(
    out: &mut String,
    patient: &str,
    source: &str,
    modality: Modality,
    start: NaiveDateTime,
    mut values: Vec<f64>,
) -> StatSet {
    let n = values.len() as i64;
    for (i, v) in values.iter_mut().enumerate() {
        *v = round_centi(*v).max(0.0);
        let offset = i as i64 * PERIOD_SECONDS / n;
        push_sensor_row(out, patient, start + Duration::seconds(offset), modality, *v, source);
    }
    summarize_period(&values).expect("n >= 1")
}

/// Generates sensor and label CSVs plus the ground-truth manifest.
/// Sensor data and labels draw from separate ChaCha streams, so changing the
/// signal coefficients leaves the sensor file untouched.
pub fn generate_cohort(cfg: &SynthConfig) -> Result<SynthOutput, SynthError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let los_dist = WeightedIndex::new(cfg.los_weights).map_err(|e| SynthError::InvalidConfig(e.to_string()))?;
    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");
    let within = |total: f64, a: f64, b: f64| (total * total - a * a - b * b).sqrt();

    let mut sensor = SENSOR_HEADER.join(",");
    sensor.push('\n');
    let mut patients = Vec::with_capacity(cfg.n_patients);

    for p in 0..cfg.n_patients {
        let id = patient_id(p, cfg.n_patients);
        let source = SOURCES[p % SOURCES.len()];
        let los = los_dist.sample(&mut rng) + 1;
        let u: f64 = rng.random();
        let modalities = if u < cfg.fraction_noise_only {
            vec![Modality::Noise]
        } else if u < cfg.fraction_noise_only + cfg.fraction_light_only {
            vec![Modality::Light]
        } else {
            vec![Modality::Noise, Modality::Light]
        };
        let noise_off = cfg.noise_patient_sd * std_normal.sample(&mut rng);
        // [period][peak, trough]
        let mut event_off = [[0.0; 2]; 2];
        if let Some(ev) = &cfg.noise_events {
            for v in event_off.iter_mut().flatten() {
                *v = ev.patient_sd * std_normal.sample(&mut rng);
            }
        }
        let light_off = cfg.light_patient_sd_log * std_normal.sample(&mut rng);
        let first = cfg.start_date + Duration::days((p % 28) as i64);

        let mut days = Vec::with_capacity(los);
        for d in 0..los {
            let date = first + Duration::days(d as i64);
            let mut feats = [None; 4];
            for period in Period::ALL {
                let start = date.and_time(match period {
                    Period::Day => NaiveTime::from_hms_opt(7, 0, 0).expect("07:00"),
                    Period::Night => NaiveTime::from_hms_opt(19, 0, 0).expect("19:00"),
                });
                for &m in &modalities {
                    let stats = match m {
                        Modality::Noise => {
                            let g = if period == Period::Day { cfg.noise_day } else { cfg.noise_night };
                            let mean = g.mean + noise_off + cfg.noise_period_sd * std_normal.sample(&mut rng);
                            let sd = within(g.sd, cfg.noise_patient_sd, cfg.noise_period_sd);
                            let dist = Normal::new(mean, sd).expect("sd > 0");
                            let mut values: Vec<f64> = (0..cfg.samples_per_period).map(|_| dist.sample(&mut rng)).collect();
                            if let (Some(ev), true) = (&cfg.noise_events, values.len() >= 2) {
                                let off = event_off[usize::from(period == Period::Night)];
                                let n = values.len();
                                let i = rng.random_range(0..n);
                                let j = (i + rng.random_range(1..n)) % n;
                                values[i] = mean + ev.z * sd + off[0] + ev.day_sd * std_normal.sample(&mut rng);
                                values[j] = mean - ev.z * sd - off[1] - ev.day_sd * std_normal.sample(&mut rng);
                            }
                            emit_period(&mut sensor, &id, source, m, start, values)
                        }
                        Modality::Light => {
                            let l = if period == Period::Day { cfg.light_day } else { cfg.light_night };
                            let mu = l.median.ln() + light_off + cfg.light_period_sd_log * std_normal.sample(&mut rng);
                            let sd = within(l.sigma_log, cfg.light_patient_sd_log, cfg.light_period_sd_log);
                            let dist = Normal::new(mu, sd).expect("sd > 0");
                            let values = (0..cfg.samples_per_period).map(|_| dist.sample(&mut rng).exp()).collect();
                            emit_period(&mut sensor, &id, source, m, start, values)
                        }
                    };
                    match (m, period) {
                        (Modality::Noise, Period::Night) => feats[0] = Some(stats.lmax),
                        (Modality::Noise, Period::Day) => feats[1] = Some(stats.lmin),
                        (Modality::Light, Period::Day) => feats[2] = Some(stats.l50),
                        (Modality::Light, Period::Night) => feats[3] = Some(stats.l50),
                    }
                }
            }
            days.push(DayTruth {
                date,
                features: feats,
                logit: 0.0,
                probability: 0.0,
                label: 0,
            });
        }
        patients.push(PatientTruth {
            patient_id: id,
            los_days: los,
            source: source.to_string(),
            modalities,
            days,
        });
    }

    let standardization: Vec<Standardization> = (0..4)
        .map(|k| {
            let vals: Vec<f64> = patients
                .iter()
                .flat_map(|p| p.days.iter().filter_map(|d| d.features[k]))
                .collect();
            let n = vals.len().max(1) as f64;
            let mean = vals.iter().sum::<f64>() / n;
            let sd = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
            Standardization {
                feature: SIGNAL_FEATURES[k].to_string(),
                mean,
                sd,
            }
        })
        .collect();

    let s = cfg.signal;
    let betas = [s.night_noise_lmax, s.day_noise_lmin, s.day_light_l50, s.night_light_l50];
    let mut label_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    label_rng.set_stream(1);
    let mut labels = Vec::new();
    for p in &mut patients {
        for d in &mut p.days {
            let mut logit = s.beta0;
            for k in 0..4 {
                let st = &standardization[k];
                if let Some(v) = d.features[k] {
                    if st.sd > 0.0 && betas[k] != 0.0 {
                        logit += betas[k] * (v - st.mean) / st.sd;
                    }
                }
            }
            d.logit = logit;
            d.probability = sigmoid(logit);
            d.label = u8::from(label_rng.random::<f64>() < d.probability);
            labels.push(DayLabel {
                patient_id: p.patient_id.clone(),
                date: d.date,
                delirium: d.label,
            });
        }
    }

    Ok(SynthOutput {
        sensor_csv: sensor.into_bytes(),
        label_csv: write_label_csv(&labels),
        manifest: SynthManifest {
            schema_version: SYNTH_SCHEMA_VERSION,
            config: cfg.clone(),
            standardization,
            patients,
        },
    })
}
