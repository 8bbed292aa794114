//! Shapley attributions: exact coalition enumeration, antithetic permutation
//! sampling and the per-feature, per-modality and per-day aggregations.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cohort::{FeatureKey, PatientSequence};
use crate::ingest::Modality;
use crate::nets::Predictor;
use crate::{par, SEQ_LEN};

/// Largest player count accepted by [`exact_shapley`].
pub const MAX_EXACT_PLAYERS: usize = 20;

/// |r| below this makes a direction ambiguous.
pub const DIRECTION_MIN_CORRELATION: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ExplainError {
    #[error("{players} players exceed the exact-enumeration limit of {max}")]
    TooManyPlayers { players: usize, max: usize },
    #[error("permutation count must be even and >= 2, got {0}")]
    BadPermutationCount(usize),
    #[error("input has {got} values, expected {expected}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("no instances to explain")]
    NoInstances,
    #[error("operation needs {expected:?} attributions")]
    WrongKind { expected: PlayerKind },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlayerKind {
    /// One player per feature column, masking all timesteps at once.
    FeatureLevel,
    /// One player per (day, feature) cell.
    CellLevel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    #[default]
    TrainMean,
    Zero,
}

/// Per-coordinate mean of the training sequences.
pub fn train_mean_baseline(train: &[PatientSequence]) -> Vec<f64> {
    let len = train.first().map_or(0, |s| s.flat().len());
    let mut acc = vec![0.0; len];
    for s in train {
        for (a, v) in acc.iter_mut().zip(s.flat()) {
            *a += v;
        }
    }
    if !train.is_empty() {
        let n = train.len() as f64;
        acc.iter_mut().for_each(|a| *a /= n);
    }
    acc
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlayerScheme {
    pub kind: PlayerKind,
    pub n_features: usize,
    /// Row-major `SEQ_LEN x n_features`.
    pub baseline: Vec<f64>,
}

impl PlayerScheme {
    pub fn new(kind: PlayerKind, n_features: usize, baseline: Vec<f64>) -> Result<Self, ExplainError> {
        if baseline.len() != SEQ_LEN * n_features {
            return Err(ExplainError::ShapeMismatch {
                expected: SEQ_LEN * n_features,
                got: baseline.len(),
            });
        }
        Ok(Self {
            kind,
            n_features,
            baseline,
        })
    }

    pub fn n_players(&self) -> usize {
        match self.kind {
            PlayerKind::FeatureLevel => self.n_features,
            PlayerKind::CellLevel => SEQ_LEN * self.n_features,
        }
    }

    fn player_of(&self, coord: usize) -> usize {
        match self.kind {
            PlayerKind::FeatureLevel => coord % self.n_features,
            PlayerKind::CellLevel => coord,
        }
    }

    /// Instance values where `present(player)` holds, baseline elsewhere.
    fn compose(&self, instance: &[f64], present: impl Fn(usize) -> bool) -> Vec<f64> {
        instance
            .iter()
            .zip(&self.baseline)
            .enumerate()
            .map(|(c, (&x, &b))| if present(self.player_of(c)) { x } else { b })
            .collect()
    }

    fn check(&self, instance: &[f64]) -> Result<(), ExplainError> {
        if instance.len() != self.baseline.len() {
            return Err(ExplainError::ShapeMismatch {
                expected: self.baseline.len(),
                got: instance.len(),
            });
        }
        Ok(())
    }

    pub fn player_names(&self, columns: &[String]) -> Vec<String> {
        match self.kind {
            PlayerKind::FeatureLevel => columns.to_vec(),
            PlayerKind::CellLevel => (0..SEQ_LEN)
                .flat_map(|d| columns.iter().map(move |c| format!("day{}_{c}", d + 1)))
                .collect(),
        }
    }

    /// The instance value a player stands for: the cell itself, or for a
    /// feature the mean over the first `valid_days` rows.
    pub fn player_value(&self, instance: &[f64], valid_days: usize, player: usize) -> f64 {
        match self.kind {
            PlayerKind::CellLevel => instance[player],
            PlayerKind::FeatureLevel => {
                let days = valid_days.clamp(1, SEQ_LEN);
                (0..days).map(|d| instance[d * self.n_features + player]).sum::<f64>() / days as f64
            }
        }
    }
}

/// Exact Shapley values by evaluating all `2^n` coalitions.
pub fn exact_shapley<P: Predictor + ?Sized>(
    model: &P,
    instance: &[f64],
    scheme: &PlayerScheme,
) -> Result<Vec<f64>, ExplainError> {
    scheme.check(instance)?;
    let n = scheme.n_players();
    if n > MAX_EXACT_PLAYERS {
        return Err(ExplainError::TooManyPlayers {
            players: n,
            max: MAX_EXACT_PLAYERS,
        });
    }
    let values: Vec<f64> = par::map_range(1 << n, |mask| {
        model.predict(&scheme.compose(instance, |p| mask >> p & 1 == 1))
    });
    // weight[s] = s! (n - s - 1)! / n! = 1 / (n * C(n - 1, s))
    let mut weight = vec![0.0; n.max(1)];
    let mut binom = 1.0;
    for (s, w) in weight.iter_mut().enumerate() {
        *w = 1.0 / (n as f64 * binom);
        binom = binom * (n - 1 - s) as f64 / (s + 1) as f64;
    }
    let mut phi = vec![0.0; n];
    for (mask, &v) in values.iter().enumerate() {
        let size = mask.count_ones() as usize;
        for (i, p) in phi.iter_mut().enumerate() {
            if mask >> i & 1 == 0 {
                *p += weight[size] * (values[mask | 1 << i] - v);
            }
        }
    }
    Ok(phi)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampledShapley {
    pub phi: Vec<f64>,
    pub stderr: Vec<f64>,
}

/// Permutation-sampling Shapley estimate from `permutations / 2` antithetic
/// pairs. Pair `k` shuffles with ChaCha stream `k` under `seed`; standard
/// errors are taken over the pair averages.
pub fn sampled_shapley<P: Predictor + ?Sized>(
    model: &P,
    instance: &[f64],
    scheme: &PlayerScheme,
    permutations: usize,
    seed: u64,
) -> Result<SampledShapley, ExplainError> {
    scheme.check(instance)?;
    if permutations < 2 || !permutations.is_multiple_of(2) {
        return Err(ExplainError::BadPermutationCount(permutations));
    }
    let n = scheme.n_players();
    let pairs = permutations / 2;
    let walk = |order: &[usize], out: &mut [f64]| {
        let mut present = vec![false; n];
        let mut prev = model.predict(&scheme.baseline);
        for &p in order {
            present[p] = true;
            let v = model.predict(&scheme.compose(instance, |q| present[q]));
            out[p] += 0.5 * (v - prev);
            prev = v;
        }
    };
    let per_pair: Vec<Vec<f64>> = par::map_range(pairs, |k| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(k as u64);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        let mut contrib = vec![0.0; n];
        walk(&order, &mut contrib);
        order.reverse();
        walk(&order, &mut contrib);
        contrib
    });
    let mut phi = vec![0.0; n];
    let mut stderr = vec![0.0; n];
    for i in 0..n {
        let xs: Vec<f64> = per_pair.iter().map(|c| c[i]).collect();
        let mean = xs.iter().sum::<f64>() / pairs as f64;
        phi[i] = mean;
        if pairs > 1 {
            let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (pairs - 1) as f64;
            stderr[i] = (var / pairs as f64).sqrt();
        }
    }
    Ok(SampledShapley { phi, stderr })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum ShapleyMode {
    Exact,
    Sampled { permutations: usize, seed: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceAttribution {
    pub instance_id: String,
    pub phi: Vec<f64>,
    pub stderr: Option<Vec<f64>>,
    /// Model output on the instance and on the baseline.
    pub f_x: f64,
    pub f_b: f64,
    /// Player values used for direction, see [`PlayerScheme::player_value`].
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributionSet {
    pub kind: PlayerKind,
    pub players: Vec<String>,
    pub instances: Vec<InstanceAttribution>,
}

/// Attributes every sequence. Sampled mode offsets the seed by the
/// instance index.
pub fn explain_sequences<P: Predictor + ?Sized>(
    model: &P,
    sequences: &[PatientSequence],
    scheme: &PlayerScheme,
    columns: &[String],
    mode: ShapleyMode,
) -> Result<AttributionSet, ExplainError> {
    if sequences.is_empty() {
        return Err(ExplainError::NoInstances);
    }
    let f_b = model.predict(&scheme.baseline);
    let mut instances = Vec::with_capacity(sequences.len());
    for (idx, seq) in sequences.iter().enumerate() {
        let x = seq.flat();
        let (phi, stderr) = match mode {
            ShapleyMode::Exact => (exact_shapley(model, &x, scheme)?, None),
            ShapleyMode::Sampled { permutations, seed } => {
                let s = sampled_shapley(model, &x, scheme, permutations, seed.wrapping_add(idx as u64))?;
                (s.phi, Some(s.stderr))
            }
        };
        let values = (0..scheme.n_players())
            .map(|p| scheme.player_value(&x, seq.valid_days, p))
            .collect();
        instances.push(InstanceAttribution {
            instance_id: seq.patient_id.clone(),
            phi,
            stderr,
            f_x: model.predict(&x),
            f_b,
            values,
        });
    }
    Ok(AttributionSet {
        kind: scheme.kind,
        players: scheme.player_names(columns),
        instances,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Positive,
    Negative,
    Ambiguous,
}

impl Direction {
    pub fn as_str(self) -> &'static str {
        match self {
            Direction::Positive => "positive",
            Direction::Negative => "negative",
            Direction::Ambiguous => "ambiguous",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub rank: usize,
    pub feature: String,
    pub importance: f64,
    pub direction: Direction,
    pub correlation: Option<f64>,
}

fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    (sxx > 0.0 && syy > 0.0).then(|| sxy / (sxx * syy).sqrt())
}

/// Ranks players by mean |phi|, most important first; ties keep player order.
pub fn summarize(set: &AttributionSet) -> Vec<SummaryRow> {
    let n = set.players.len();
    let count = set.instances.len().max(1) as f64;
    let mut rows: Vec<SummaryRow> = (0..n)
        .map(|p| {
            let phi: Vec<f64> = set.instances.iter().map(|a| a.phi[p]).collect();
            let vals: Vec<f64> = set.instances.iter().map(|a| a.values[p]).collect();
            let r = pearson(&vals, &phi);
            let direction = match r {
                Some(r) if r >= DIRECTION_MIN_CORRELATION => Direction::Positive,
                Some(r) if r <= -DIRECTION_MIN_CORRELATION => Direction::Negative,
                _ => Direction::Ambiguous,
            };
            SummaryRow {
                rank: 0,
                feature: set.players[p].clone(),
                importance: phi.iter().map(|v| v.abs()).sum::<f64>() / count,
                direction,
                correlation: r,
            }
        })
        .collect();
    rows.sort_by(|a, b| b.importance.total_cmp(&a.importance));
    for (i, row) in rows.iter_mut().enumerate() {
        row.rank = i + 1;
    }
    rows
}

fn mean_abs(set: &AttributionSet, player: usize) -> f64 {
    let n = set.instances.len().max(1) as f64;
    set.instances.iter().map(|a| a.phi[player].abs()).sum::<f64>() / n
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModalityTotals {
    pub noise_total: f64,
    pub light_total: f64,
}

/// Sum of per-feature mean |phi| for each modality.
pub fn modality_totals(set: &AttributionSet, columns: &[FeatureKey]) -> Result<ModalityTotals, ExplainError> {
    if set.kind != PlayerKind::FeatureLevel {
        return Err(ExplainError::WrongKind {
            expected: PlayerKind::FeatureLevel,
        });
    }
    let mut t = ModalityTotals {
        noise_total: 0.0,
        light_total: 0.0,
    };
    for (p, key) in columns.iter().enumerate() {
        match key.modality {
            Modality::Noise => t.noise_total += mean_abs(set, p),
            Modality::Light => t.light_total += mean_abs(set, p),
        }
    }
    Ok(t)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Winner {
    Noise,
    Light,
    Equal,
}

impl Winner {
    pub fn as_str(self) -> &'static str {
        match self {
            Winner::Noise => "noise",
            Winner::Light => "light",
            Winner::Equal => "equal",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DayModality {
    pub day: usize,
    pub noise_total: f64,
    pub light_total: f64,
    pub winner: Winner,
}

/// Per day, the sum over that day's cells of mean |phi|, by modality.
pub fn modality_by_day(set: &AttributionSet, columns: &[FeatureKey]) -> Result<Vec<DayModality>, ExplainError> {
    if set.kind != PlayerKind::CellLevel {
        return Err(ExplainError::WrongKind {
            expected: PlayerKind::CellLevel,
        });
    }
    let f = columns.len();
    Ok((0..SEQ_LEN)
        .map(|d| {
            let (mut noise, mut light) = (0.0, 0.0);
            for (j, key) in columns.iter().enumerate() {
                let v = mean_abs(set, d * f + j);
                match key.modality {
                    Modality::Noise => noise += v,
                    Modality::Light => light += v,
                }
            }
            let winner = if noise > light {
                Winner::Noise
            } else if light > noise {
                Winner::Light
            } else {
                Winner::Equal
            };
            DayModality {
                day: d + 1,
                noise_total: noise,
                light_total: light,
                winner,
            }
        })
        .collect())
}

pub fn attribution_csv(set: &AttributionSet) -> String {
    let mut out = String::from("instance_id,player,phi,stderr\n");
    for inst in &set.instances {
        for (p, name) in set.players.iter().enumerate() {
            let se = inst.stderr.as_ref().map(|s| s[p].to_string()).unwrap_or_default();
            let _ = writeln!(out, "{},{},{},{}", inst.instance_id, name, inst.phi[p], se);
        }
    }
    out
}

pub fn summary_csv(rows: &[SummaryRow]) -> String {
    let mut out = String::from("rank,feature,importance,direction\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{},{}", r.rank, r.feature, r.importance, r.direction.as_str());
    }
    out
}

pub fn by_day_csv(days: &[DayModality]) -> String {
    let mut out = String::from("day,noise_total,light_total,winner\n");
    for d in days {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            d.day,
            d.noise_total,
            d.light_total,
            d.winner.as_str()
        );
    }
    out
}
