//! Small sequence classifiers with hand-written reverse-mode gradients.
//!
//! Three bodies share one classifier head:
//!
//! * `Cnn1dX2`: two same-padded temporal convolutions with ReLU, then a
//!   global max-pool over time.
//! * `Lstm` and `Gru`: a single recurrent layer over all `SEQ_LEN` steps;
//!   the final hidden state is the representation.
//!
//! The head is an optional ReLU dense layer followed by one sigmoid unit.
//! Padded timesteps are not masked. Everything runs in `f64`.

mod checkpoint;
mod cnn;
mod gru;
mod head;
mod lstm;
mod train;

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::SEQ_LEN;

pub use checkpoint::{Checkpoint, CHECKPOINT_SCHEMA_VERSION};
pub use train::{
    adam_step, cross_validate, default_grid, train, train_flat, AdamState, CvReport, CvResult,
    TrainConfig, TrainHistory,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NetError {
    #[error("input has {got} values, model expects {expected}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("training set is empty")]
    EmptyTrainingSet,
    #[error("need at least {needed} patients for cross-validation, got {got}")]
    TooFewPatients { needed: usize, got: usize },
    #[error("bad checkpoint: {0}")]
    Checkpoint(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arch {
    #[serde(rename = "cnn1d_x2")]
    Cnn1dX2,
    Lstm,
    Gru,
}

impl Arch {
    pub const ALL: [Arch; 3] = [Arch::Cnn1dX2, Arch::Lstm, Arch::Gru];

    pub fn as_str(self) -> &'static str {
        match self {
            Arch::Cnn1dX2 => "cnn1d_x2",
            Arch::Lstm => "lstm",
            Arch::Gru => "gru",
        }
    }
}

impl fmt::Display for Arch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

fn default_hidden() -> usize {
    16
}
fn default_kernel() -> usize {
    3
}
fn default_head_hidden() -> usize {
    8
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub arch: Arch,
    /// Recurrent hidden size, or channels per convolution.
    #[serde(default = "default_hidden")]
    pub hidden: usize,
    /// Temporal kernel width (CNN only).
    #[serde(default = "default_kernel")]
    pub kernel: usize,
    /// Width of the ReLU layer in the head; 0 feeds the sigmoid directly.
    #[serde(default = "default_head_hidden")]
    pub head_hidden: usize,
    #[serde(default)]
    pub seed: u64,
}

impl ModelConfig {
    pub fn new(arch: Arch) -> Self {
        Self {
            arch,
            hidden: default_hidden(),
            kernel: default_kernel(),
            head_hidden: default_head_hidden(),
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<(), NetError> {
        if self.hidden == 0 {
            return Err(NetError::InvalidConfig("hidden must be >= 1".into()));
        }
        if self.arch == Arch::Cnn1dX2 && !(1..=SEQ_LEN).contains(&self.kernel) {
            return Err(NetError::InvalidConfig(format!(
                "kernel must lie in 1..={SEQ_LEN}, got {}",
                self.kernel
            )));
        }
        Ok(())
    }
}

/// A named, row-major parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, Copy)]
enum Init {
    Glorot { fan_in: usize, fan_out: usize },
    Zero,
    /// LSTM gate bias: 1 on the forget block `[h, 2h)`, 0 elsewhere.
    ForgetOne { h: usize },
}

fn layout(cfg: &ModelConfig, n_features: usize) -> Vec<(String, Vec<usize>, Init)> {
    let (f, h, k) = (n_features, cfg.hidden, cfg.kernel);
    let w = |fan_in, fan_out| Init::Glorot { fan_in, fan_out };
    let mut out: Vec<(String, Vec<usize>, Init)> = match cfg.arch {
        Arch::Cnn1dX2 => vec![
            ("conv1.weight".into(), vec![h, f, k], w(f * k, h * k)),
            ("conv1.bias".into(), vec![h], Init::Zero),
            ("conv2.weight".into(), vec![h, h, k], w(h * k, h * k)),
            ("conv2.bias".into(), vec![h], Init::Zero),
        ],
        Arch::Lstm => vec![
            ("lstm.weight_ih".into(), vec![4 * h, f], w(f, 4 * h)),
            ("lstm.weight_hh".into(), vec![4 * h, h], w(h, 4 * h)),
            ("lstm.bias".into(), vec![4 * h], Init::ForgetOne { h }),
        ],
        Arch::Gru => vec![
            ("gru.weight_ih".into(), vec![3 * h, f], w(f, 3 * h)),
            ("gru.weight_hh".into(), vec![3 * h, h], w(h, 3 * h)),
            ("gru.bias_ih".into(), vec![3 * h], Init::Zero),
            ("gru.bias_hh".into(), vec![3 * h], Init::Zero),
        ],
    };
    let rep = h;
    if cfg.head_hidden > 0 {
        let hh = cfg.head_hidden;
        out.push(("head.hidden.weight".into(), vec![hh, rep], w(rep, hh)));
        out.push(("head.hidden.bias".into(), vec![hh], Init::Zero));
        out.push(("head.out.weight".into(), vec![1, hh], w(hh, 1)));
    } else {
        out.push(("head.out.weight".into(), vec![1, rep], w(rep, 1)));
    }
    out.push(("head.out.bias".into(), vec![1], Init::Zero));
    out
}

/// Glorot-uniform bound `sqrt(6 / (fan_in + fan_out))` for every weight
/// tensor, `None` for biases. Indexed like [`ModelParams::tensors`].
pub fn init_bounds(cfg: &ModelConfig, n_features: usize) -> Vec<Option<f64>> {
    layout(cfg, n_features)
        .into_iter()
        .map(|(_, _, init)| match init {
            Init::Glorot { fan_in, fan_out } => Some((6.0 / (fan_in + fan_out) as f64).sqrt()),
            _ => None,
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub n_features: usize,
    pub tensors: Vec<Tensor>,
}

/// Anything that maps a row-major `SEQ_LEN x F` input to a probability.
pub trait Predictor: Sync {
    fn predict(&self, x: &[f64]) -> f64;
}

impl<F> Predictor for F
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    fn predict(&self, x: &[f64]) -> f64 {
        self(x)
    }
}

impl Predictor for ModelParams {
    fn predict(&self, x: &[f64]) -> f64 {
        assert_eq!(x.len(), self.input_len(), "input shape");
        sigmoid(self.logit(x))
    }
}

pub fn init_model(cfg: &ModelConfig, n_features: usize) -> Result<ModelParams, NetError> {
    cfg.validate()?;
    if n_features == 0 {
        return Err(NetError::InvalidConfig("n_features must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let tensors = layout(cfg, n_features)
        .into_iter()
        .map(|(name, shape, init)| {
            let len = shape.iter().product();
            let data = match init {
                Init::Zero => vec![0.0; len],
                Init::ForgetOne { h } => (0..len)
                    .map(|i| if (h..2 * h).contains(&i) { 1.0 } else { 0.0 })
                    .collect(),
                Init::Glorot { fan_in, fan_out } => {
                    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
                    (0..len)
                        .map(|_| loop {
                            let w: f64 = rng.random_range(-a..a);
                            if w.abs() < a {
                                break w;
                            }
                        })
                        .collect()
                }
            };
            Tensor { name, shape, data }
        })
        .collect();
    Ok(ModelParams {
        config: *cfg,
        n_features,
        tensors,
    })
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Binary cross-entropy with `p` clamped to `[clamp, 1 - clamp]`.
pub fn bce_loss(p: f64, y: u8, clamp: f64) -> f64 {
    let p = p.clamp(clamp, 1.0 - clamp);
    if y == 1 {
        -p.ln()
    } else {
        -(1.0 - p).ln()
    }
}

enum BodyCache {
    Cnn(cnn::Cache),
    Lstm(lstm::Cache),
    Gru(gru::Cache),
}

impl ModelParams {
    pub fn input_len(&self) -> usize {
        SEQ_LEN * self.n_features
    }

    pub fn param_count(&self) -> usize {
        self.tensors.iter().map(|t| t.data.len()).sum()
    }

    fn body_len(&self) -> usize {
        match self.config.arch {
            Arch::Cnn1dX2 => 4,
            Arch::Lstm => 3,
            Arch::Gru => 4,
        }
    }

    fn check_input(&self, x: &[f64]) -> Result<(), NetError> {
        if x.len() != self.input_len() {
            return Err(NetError::ShapeMismatch {
                expected: self.input_len(),
                got: x.len(),
            });
        }
        Ok(())
    }

    fn body_forward(&self, x: &[f64]) -> (Vec<f64>, BodyCache) {
        let (body, _) = self.tensors.split_at(self.body_len());
        let (h, f) = (self.config.hidden, self.n_features);
        match self.config.arch {
            Arch::Cnn1dX2 => {
                let (out, c) = cnn::forward(body, x, f, h, self.config.kernel);
                (out, BodyCache::Cnn(c))
            }
            Arch::Lstm => {
                let (out, c) = lstm::forward(body, x, f, h);
                (out, BodyCache::Lstm(c))
            }
            Arch::Gru => {
                let (out, c) = gru::forward(body, x, f, h);
                (out, BodyCache::Gru(c))
            }
        }
    }

    /// Representation fed to the head: pooled channels or final hidden state.
    pub fn body_output(&self, x: &[f64]) -> Result<Vec<f64>, NetError> {
        self.check_input(x)?;
        Ok(self.body_forward(x).0)
    }

    fn logit(&self, x: &[f64]) -> f64 {
        let (rep, _) = self.body_forward(x);
        let (_, head_t) = self.tensors.split_at(self.body_len());
        head::forward(head_t, &rep, self.config.head_hidden).0
    }

    pub fn forward(&self, x: &[f64]) -> Result<f64, NetError> {
        self.check_input(x)?;
        Ok(sigmoid(self.logit(x)))
    }

    /// Loss, probability and exact gradients of `bce_loss(forward(x), y)`,
    /// one gradient vector per tensor.
    pub fn loss_and_gradients(
        &self,
        x: &[f64],
        y: u8,
        bce_clamp: f64,
    ) -> Result<(f64, f64, Vec<Vec<f64>>), NetError> {
        self.check_input(x)?;
        let (rep, body_cache) = self.body_forward(x);
        let split = self.body_len();
        let (body_t, head_t) = self.tensors.split_at(split);
        let (z, head_cache) = head::forward(head_t, &rep, self.config.head_hidden);
        let p = sigmoid(z);
        let loss = bce_loss(p, y, bce_clamp);

        let mut grads: Vec<Vec<f64>> = self.tensors.iter().map(|t| vec![0.0; t.data.len()]).collect();
        // the clamp is flat outside (clamp, 1 - clamp)
        let dz = if p > bce_clamp && p < 1.0 - bce_clamp {
            p - f64::from(y)
        } else {
            0.0
        };
        let (body_g, head_g) = grads.split_at_mut(split);
        let drep = head::backward(head_t, &head_cache, &rep, dz, head_g, self.config.head_hidden);
        let (h, f) = (self.config.hidden, self.n_features);
        match body_cache {
            BodyCache::Cnn(c) => cnn::backward(body_t, x, &c, &drep, body_g, f, h, self.config.kernel),
            BodyCache::Lstm(c) => lstm::backward(body_t, x, &c, &drep, body_g, f, h),
            BodyCache::Gru(c) => gru::backward(body_t, x, &c, &drep, body_g, f, h),
        }
        Ok((loss, p, grads))
    }

    /// Named gradients of the loss for one labelled sequence.
    pub fn gradients(&self, x: &[f64], y: u8, bce_clamp: f64) -> Result<Vec<Tensor>, NetError> {
        let (_, _, grads) = self.loss_and_gradients(x, y, bce_clamp)?;
        Ok(self
            .tensors
            .iter()
            .zip(grads)
            .map(|(t, g)| Tensor {
                name: t.name.clone(),
                shape: t.shape.clone(),
                data: g,
            })
            .collect())
    }

    /// Distance from `x` to the nearest non-differentiable point of the
    /// network: the smallest |pre-activation| over ReLU units and the
    /// smallest gap between the winner and runner-up of each active
    /// max-pool window. Infinite when the network is smooth.
    pub fn kink_margin(&self, x: &[f64]) -> Result<f64, NetError> {
        self.check_input(x)?;
        let (rep, cache) = self.body_forward(x);
        let (_, head_t) = self.tensors.split_at(self.body_len());
        let (_, hc) = head::forward(head_t, &rep, self.config.head_hidden);
        let mut margin = hc.relu_margin();
        if let BodyCache::Cnn(c) = cache {
            margin = margin.min(c.margin(self.config.hidden));
        }
        Ok(margin)
    }

    pub fn tensor(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn tensor_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.tensors.iter_mut().find(|t| t.name == name)
    }
}

/// `out[r] += sum_c w[r * cols + c] * v[c]`.
#[inline]
pub(crate) fn matvec_add(w: &[f64], v: &[f64], out: &mut [f64]) {
    let cols = v.len();
    for (r, o) in out.iter_mut().enumerate() {
        let row = &w[r * cols..(r + 1) * cols];
        *o += row.iter().zip(v).map(|(a, b)| a * b).sum::<f64>();
    }
}

/// `dw[r, c] += g[r] * v[c]` and, if given, `dv[c] += sum_r w[r, c] * g[r]`.
#[inline]
pub(crate) fn outer_backward(w: &[f64], v: &[f64], g: &[f64], dw: &mut [f64], dv: Option<&mut [f64]>) {
    let cols = v.len();
    for (r, &gr) in g.iter().enumerate() {
        if gr == 0.0 {
            continue;
        }
        let row = &mut dw[r * cols..(r + 1) * cols];
        for (d, &vc) in row.iter_mut().zip(v) {
            *d += gr * vc;
        }
    }
    if let Some(dv) = dv {
        for (r, &gr) in g.iter().enumerate() {
            if gr == 0.0 {
                continue;
            }
            let row = &w[r * cols..(r + 1) * cols];
            for (d, &wc) in dv.iter_mut().zip(row) {
                *d += wc * gr;
            }
        }
    }
}
