//! JSON checkpoints: every parameter tensor (row-major) plus the training
//! config and its hash.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::clustering::MetricWeights;
use crate::error::{Error, Result};
use crate::numerics::{Matrix, Vector};

use super::config::TrainConfig;
use super::params::{Classifier, Encoder, ModelParams};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub rows: usize,
    pub cols: usize,
    /// Row-major.
    pub data: Vec<f64>,
}

impl Tensor {
    fn from_matrix(m: &Matrix) -> Self {
        Self {
            rows: m.nrows(),
            cols: m.ncols(),
            data: m.transpose().as_slice().to_vec(),
        }
    }

    fn from_vector(v: &Vector) -> Self {
        Self {
            rows: v.len(),
            cols: 1,
            data: v.as_slice().to_vec(),
        }
    }

    fn to_matrix(&self, name: &str) -> Result<Matrix> {
        if self.rows * self.cols != self.data.len() {
            return Err(Error::contract(format!("tensor {name} has {} values for {}×{}", self.data.len(), self.rows, self.cols)));
        }
        Ok(Matrix::from_row_slice(self.rows, self.cols, &self.data))
    }

    fn to_vector(&self, name: &str) -> Result<Vector> {
        if self.cols != 1 || self.rows != self.data.len() {
            return Err(Error::contract(format!("tensor {name} is not a column vector")));
        }
        Ok(Vector::from_vec(self.data.clone()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamTensors {
    pub encoder_weight: Tensor,
    pub encoder_bias: Tensor,
    pub metric: Tensor,
    pub classifier_weight: Tensor,
    pub classifier_bias: Tensor,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub config_hash: String,
    pub config: TrainConfig,
    pub best_epoch: usize,
    pub params: ParamTensors,
}

impl Checkpoint {
    pub fn new(params: &ModelParams, config: &TrainConfig, best_epoch: usize) -> Self {
        Self {
            version: CHECKPOINT_VERSION,
            config_hash: config.hash(),
            config: config.clone(),
            best_epoch,
            params: ParamTensors {
                encoder_weight: Tensor::from_matrix(&params.encoder.weight),
                encoder_bias: Tensor::from_vector(&params.encoder.bias),
                metric: Tensor {
                    rows: params.metric.len(),
                    cols: 1,
                    data: params.metric.as_slice().to_vec(),
                },
                classifier_weight: Tensor::from_matrix(&params.classifier.weight),
                classifier_bias: Tensor::from_vector(&params.classifier.bias),
            },
        }
    }

    pub fn model_params(&self) -> Result<ModelParams> {
        let p = &self.params;
        let params = ModelParams {
            encoder: Encoder {
                weight: p.encoder_weight.to_matrix("encoder.weight")?,
                bias: p.encoder_bias.to_vector("encoder.bias")?,
            },
            metric: MetricWeights::new(p.metric.to_vector("metric.w")?.as_slice().to_vec())?,
            classifier: Classifier {
                weight: p.classifier_weight.to_matrix("classifier.weight")?,
                bias: p.classifier_bias.to_vector("classifier.bias")?,
            },
        };
        params.validate()?;
        Ok(params)
    }
}

pub fn save_checkpoint(path: &Path, params: &ModelParams, config: &TrainConfig, best_epoch: usize) -> Result<()> {
    let text = serde_json::to_string_pretty(&Checkpoint::new(params, config, best_epoch)).expect("checkpoint serializes");
    fs::write(path, text + "\n").map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Loads a checkpoint, checking its version and config hash.
pub fn load_checkpoint(path: &Path) -> Result<(ModelParams, Checkpoint)> {
    let text = fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let load_err = |line: usize, message: String| Error::Load {
        path: path.to_path_buf(),
        line,
        message,
    };
    let ck: Checkpoint = serde_json::from_str(&text).map_err(|e| load_err(e.line(), e.to_string()))?;
    if ck.version != CHECKPOINT_VERSION {
        return Err(load_err(0, format!("unsupported checkpoint version {}", ck.version)));
    }
    if ck.config_hash != ck.config.hash() {
        return Err(load_err(0, "config hash does not match the stored config".into()));
    }
    let params = ck.model_params()?;
    Ok((params, ck))
}
