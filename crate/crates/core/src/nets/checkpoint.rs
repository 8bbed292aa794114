//! Versioned JSON checkpoints. Tensors are stored as nested arrays matching
//! their shape; `f64` values round-trip bit-exactly.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{layout, ModelConfig, ModelParams, NetError, Tensor, TrainConfig};

pub const CHECKPOINT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub schema_version: u32,
    pub config: ModelConfig,
    pub n_features: usize,
    pub tensors: Vec<CheckpointTensor>,
    pub train: Option<TrainConfig>,
}

fn nest(data: &[f64], shape: &[usize]) -> Value {
    match shape {
        [] | [_] => Value::Array(data.iter().map(|&v| Value::from(v)).collect()),
        [n, rest @ ..] => {
            let stride: usize = rest.iter().product();
            Value::Array(
                (0..*n)
                    .map(|i| nest(&data[i * stride..(i + 1) * stride], rest))
                    .collect(),
            )
        }
    }
}

fn flatten(value: &Value, out: &mut Vec<f64>) -> Result<(), NetError> {
    match value {
        Value::Array(items) => items.iter().try_for_each(|v| flatten(v, out)),
        Value::Number(n) => {
            out.push(n.as_f64().ok_or_else(|| NetError::Checkpoint("non-f64 number".into()))?);
            Ok(())
        }
        other => Err(NetError::Checkpoint(format!("unexpected value {other}"))),
    }
}

impl Checkpoint {
    pub fn from_params(params: &ModelParams, train: Option<TrainConfig>) -> Self {
        Self {
            schema_version: CHECKPOINT_SCHEMA_VERSION,
            config: params.config,
            n_features: params.n_features,
            tensors: params
                .tensors
                .iter()
                .map(|t| CheckpointTensor {
                    name: t.name.clone(),
                    shape: t.shape.clone(),
                    values: nest(&t.data, &t.shape),
                })
                .collect(),
            train,
        }
    }

    pub fn to_params(&self) -> Result<ModelParams, NetError> {
        if self.schema_version != CHECKPOINT_SCHEMA_VERSION {
            return Err(NetError::Checkpoint(format!(
                "unsupported schema_version {}",
                self.schema_version
            )));
        }
        self.config.validate()?;
        let expected = layout(&self.config, self.n_features);
        if expected.len() != self.tensors.len() {
            return Err(NetError::Checkpoint("tensor count does not match config".into()));
        }
        let mut tensors = Vec::with_capacity(expected.len());
        for ((name, shape, _), t) in expected.into_iter().zip(&self.tensors) {
            if t.name != name || t.shape != shape {
                return Err(NetError::Checkpoint(format!(
                    "expected {name} {shape:?}, found {} {:?}",
                    t.name, t.shape
                )));
            }
            let mut data = Vec::with_capacity(shape.iter().product());
            flatten(&t.values, &mut data)?;
            if data.len() != shape.iter().product::<usize>() {
                return Err(NetError::Checkpoint(format!("{name}: wrong element count")));
            }
            tensors.push(Tensor { name, shape, data });
        }
        Ok(ModelParams {
            config: self.config,
            n_features: self.n_features,
            tensors,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("checkpoint serialises")
    }

    pub fn from_json(s: &str) -> Result<Self, NetError> {
        serde_json::from_str(s).map_err(|e| NetError::Checkpoint(e.to_string()))
    }
}
