//! Adam, the epoch loop and patient-grouped k-fold model selection.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{init_model, Arch, ModelConfig, ModelParams, NetError};
use crate::cohort::PatientSequence;
use crate::eval::roc_auc;
use crate::par;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps_adam: f64,
    pub bce_clamp: f64,
    pub shuffle_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 1,
            learning_rate: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            eps_adam: 1e-8,
            bce_clamp: 1e-7,
            shuffle_seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), NetError> {
        if self.epochs == 0 {
            return Err(NetError::InvalidConfig("epochs must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(NetError::InvalidConfig("batch_size must be >= 1".into()));
        }
        if self.learning_rate.is_nan() || self.learning_rate <= 0.0 {
            return Err(NetError::InvalidConfig("learning_rate must be > 0".into()));
        }
        Ok(())
    }
}

/// Mean training loss of every epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct TrainHistory {
    pub epoch_loss: Vec<f64>,
}

/// First and second moment estimates, shaped like the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(params: &ModelParams) -> Self {
        let zeros: Vec<Vec<f64>> = params.tensors.iter().map(|t| vec![0.0; t.data.len()]).collect();
        Self {
            m: zeros.clone(),
            v: zeros,
        }
    }
}

/// One bias-corrected Adam update at step `t >= 1`.
pub fn adam_step(
    params: &mut ModelParams,
    grads: &[Vec<f64>],
    state: &mut AdamState,
    t: u64,
    cfg: &TrainConfig,
) {
    debug_assert!(t >= 1);
    let t = i32::try_from(t).unwrap_or(i32::MAX);
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for (((tensor, g), m), v) in params
        .tensors
        .iter_mut()
        .zip(grads)
        .zip(&mut state.m)
        .zip(&mut state.v)
    {
        for i in 0..tensor.data.len() {
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            tensor.data[i] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.eps_adam);
        }
    }
}

/// Trains on labelled sequences.
pub fn train(
    cfg: &ModelConfig,
    tc: &TrainConfig,
    data: &[PatientSequence],
) -> Result<(ModelParams, TrainHistory), NetError> {
    let n_features = data.first().map_or(0, PatientSequence::n_features);
    let xs: Vec<Vec<f64>> = data.iter().map(PatientSequence::flat).collect();
    let ys: Vec<u8> = data.iter().map(|s| s.label).collect();
    train_flat(cfg, tc, &xs, &ys, n_features)
}

/// Trains on flattened `SEQ_LEN x n_features` inputs. Each epoch visits the
/// samples in a seeded shuffled order and takes one Adam step per batch.
pub fn train_flat(
    cfg: &ModelConfig,
    tc: &TrainConfig,
    xs: &[Vec<f64>],
    ys: &[u8],
    n_features: usize,
) -> Result<(ModelParams, TrainHistory), NetError> {
    tc.validate()?;
    if xs.is_empty() {
        return Err(NetError::EmptyTrainingSet);
    }
    let mut params = init_model(cfg, n_features)?;
    if let Some(bad) = xs.iter().find(|x| x.len() != params.input_len()) {
        return Err(NetError::ShapeMismatch {
            expected: params.input_len(),
            got: bad.len(),
        });
    }
    let mut state = AdamState::new(&params);
    let mut rng = ChaCha8Rng::seed_from_u64(tc.shuffle_seed);
    let mut order: Vec<usize> = (0..xs.len()).collect();
    let mut history = TrainHistory::default();
    let mut step = 0u64;
    let mut acc: Vec<Vec<f64>> = params.tensors.iter().map(|t| vec![0.0; t.data.len()]).collect();

    for _ in 0..tc.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(tc.batch_size) {
            for a in acc.iter_mut() {
                a.fill(0.0);
            }
            for &i in batch {
                let (loss, _, g) = params.loss_and_gradients(&xs[i], ys[i], tc.bce_clamp)?;
                total += loss;
                for (a, gi) in acc.iter_mut().zip(&g) {
                    for (x, y) in a.iter_mut().zip(gi) {
                        *x += y;
                    }
                }
            }
            if batch.len() > 1 {
                let scale = 1.0 / batch.len() as f64;
                acc.iter_mut().flatten().for_each(|v| *v *= scale);
            }
            step += 1;
            adam_step(&mut params, &acc, &mut state, step, tc);
        }
        history.epoch_loss.push(total / xs.len() as f64);
    }
    Ok((params, history))
}

/// Default search grid for one architecture: hidden in {8, 16, 32}, head
/// width in {0, 8} and, for the CNN, kernel in {2, 3}.
pub fn default_grid(arch: Arch, seed: u64) -> Vec<ModelConfig> {
    let kernels: &[usize] = if arch == Arch::Cnn1dX2 { &[2, 3] } else { &[3] };
    let mut grid = Vec::new();
    for &hidden in &[8, 16, 32] {
        for &kernel in kernels {
            for &head_hidden in &[0, 8] {
                grid.push(ModelConfig {
                    arch,
                    hidden,
                    kernel,
                    head_hidden,
                    seed,
                });
            }
        }
    }
    grid
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvResult {
    pub config: ModelConfig,
    /// Validation AUC per fold; `None` when the fold holds a single class.
    pub fold_auc: Vec<Option<f64>>,
    /// Mean over the folds with a defined AUC.
    pub mean_auc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub k: usize,
    pub seed: u64,
    pub results: Vec<CvResult>,
    pub best: usize,
}

impl CvReport {
    pub fn best_config(&self) -> ModelConfig {
        self.results[self.best].config
    }
}

/// Patient-grouped k-fold cross-validation over `grid`; picks the config
/// with the highest mean validation AUC, first in grid order on ties.
pub fn cross_validate(
    grid: &[ModelConfig],
    data: &[PatientSequence],
    k: usize,
    seed: u64,
    tc: &TrainConfig,
) -> Result<CvReport, NetError> {
    if grid.is_empty() {
        return Err(NetError::InvalidConfig("empty hyperparameter grid".into()));
    }
    if k < 2 {
        return Err(NetError::InvalidConfig("k must be >= 2".into()));
    }
    tc.validate()?;
    for cfg in grid {
        cfg.validate()?;
    }

    let mut by_patient: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, s) in data.iter().enumerate() {
        by_patient.entry(&s.patient_id).or_default().push(i);
    }
    if by_patient.len() < k {
        return Err(NetError::TooFewPatients {
            needed: k,
            got: by_patient.len(),
        });
    }
    let mut groups: Vec<Vec<usize>> = by_patient.into_values().collect();
    groups.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut fold_of = vec![0; data.len()];
    for (g, members) in groups.iter().enumerate() {
        for &i in members {
            fold_of[i] = g % k;
        }
    }

    let n_features = data.first().map_or(0, PatientSequence::n_features);
    let xs: Vec<Vec<f64>> = data.iter().map(PatientSequence::flat).collect();
    let ys: Vec<u8> = data.iter().map(|s| s.label).collect();

    let tasks: Vec<(usize, usize)> = (0..grid.len())
        .flat_map(|c| (0..k).map(move |f| (c, f)))
        .collect();
    let aucs: Vec<Result<Option<f64>, NetError>> = par::map_slice(&tasks, |&(c, fold)| {
        let (mut tx, mut ty, mut vx, mut vy) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        for i in 0..xs.len() {
            if fold_of[i] == fold {
                vx.push(xs[i].clone());
                vy.push(ys[i]);
            } else {
                tx.push(xs[i].clone());
                ty.push(ys[i]);
            }
        }
        let (model, _) = train_flat(&grid[c], tc, &tx, &ty, n_features)?;
        let scores: Vec<f64> = vx.iter().map(|x| model.forward(x)).collect::<Result<_, _>>()?;
        Ok(roc_auc(&scores, &vy).ok())
    });

    let mut results = Vec::with_capacity(grid.len());
    let mut iter = aucs.into_iter();
    for cfg in grid {
        let fold_auc: Vec<Option<f64>> = iter.by_ref().take(k).collect::<Result<_, _>>()?;
        let defined: Vec<f64> = fold_auc.iter().flatten().copied().collect();
        let mean_auc = (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64);
        log::debug!("cv {:?}: folds {:?} mean {:?}", cfg, fold_auc, mean_auc);
        results.push(CvResult {
            config: *cfg,
            fold_auc,
            mean_auc,
        });
    }
    let mut best = 0;
    for (i, r) in results.iter().enumerate() {
        let score = r.mean_auc.unwrap_or(f64::NEG_INFINITY);
        if score > results[best].mean_auc.unwrap_or(f64::NEG_INFINITY) {
            best = i;
        }
    }
    Ok(CvReport {
        k,
        seed,
        results,
        best,
    })
}
