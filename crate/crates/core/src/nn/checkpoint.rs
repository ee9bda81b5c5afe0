//! JSON checkpoints: network parameters, optimizer state and the lexicon.
//!
//! Reals are written as shortest round-trip decimals, so a save/load cycle
//! reproduces every parameter bit for bit.

use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{AdamConfig, Dense, Optimizer, OptimizerKind, QNetwork};
use crate::lexicon::{Lexicon, LexiconError, LexiconRecord};
use crate::scalar::Real;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("malformed checkpoint: {0}")]
    Format(#[from] serde_json::Error),
    #[error("checkpoint version {found} is not supported (expected {CHECKPOINT_VERSION})")]
    FormatVersionMismatch { found: u32 },
    #[error("layer dims {found:?} do not match expected {expected:?}")]
    DimensionMismatch { expected: Vec<usize>, found: Vec<usize> },
    #[error("checkpoint lexicon: {0}")]
    Lexicon(#[from] LexiconError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct MomentRecord<T> {
    pub weights: Vec<Vec<T>>,
    pub bias: Vec<T>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct OptimizerState<T> {
    pub kind: OptimizerKind,
    pub learning_rate: T,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub step: u64,
    pub first_moments: Vec<MomentRecord<T>>,
    pub second_moments: Vec<MomentRecord<T>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct Checkpoint<T> {
    pub version: u32,
    pub layer_dims: Vec<usize>,
    /// One row-major matrix per layer, shaped `(inputs, outputs)`.
    pub weights: Vec<Vec<Vec<T>>>,
    pub biases: Vec<Vec<T>>,
    pub optimizer_state: OptimizerState<T>,
    pub lexicon: LexiconRecord,
    /// Opaque run state used to resume training exactly.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub training_state: Option<serde_json::Value>,
}

fn matrix_rows<T: Real>(m: &Array2<T>) -> Vec<Vec<T>> {
    m.rows().into_iter().map(|r| r.to_vec()).collect()
}

fn rows_matrix<T: Real>(rows: &[Vec<T>], shape: (usize, usize)) -> Option<Array2<T>> {
    if rows.len() != shape.0 || rows.iter().any(|r| r.len() != shape.1) {
        return None;
    }
    Array2::from_shape_vec(shape, rows.concat()).ok()
}

fn dense_record<T: Real>(d: &Dense<T>) -> MomentRecord<T> {
    MomentRecord { weights: matrix_rows(&d.weights), bias: d.bias.to_vec() }
}

impl<T: Real> Checkpoint<T> {
    pub fn capture(net: &QNetwork<T>, optimizer: &Optimizer<T>, lexicon: &Lexicon) -> Self {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            layer_dims: net.dims(),
            weights: net.layers().iter().map(|l| matrix_rows(&l.weights)).collect(),
            biases: net.layers().iter().map(|l| l.bias.to_vec()).collect(),
            optimizer_state: OptimizerState {
                kind: optimizer.kind,
                learning_rate: optimizer.learning_rate,
                beta1: optimizer.adam.beta1,
                beta2: optimizer.adam.beta2,
                epsilon: optimizer.adam.epsilon,
                step: optimizer.step,
                first_moments: optimizer.first_moments.iter().map(dense_record).collect(),
                second_moments: optimizer.second_moments.iter().map(dense_record).collect(),
            },
            lexicon: lexicon.to_record(),
            training_state: None,
        }
    }

    /// Rebuilds the network, optimizer and lexicon. With `expected_dims`,
    /// the stored architecture must match it exactly.
    pub fn restore(
        &self,
        expected_dims: Option<&[usize]>,
    ) -> Result<(QNetwork<T>, Optimizer<T>, Lexicon), CheckpointError> {
        if self.version != CHECKPOINT_VERSION {
            return Err(CheckpointError::FormatVersionMismatch { found: self.version });
        }
        let dims = &self.layer_dims;
        let mismatch = |expected: &[usize]| CheckpointError::DimensionMismatch {
            expected: expected.to_vec(),
            found: dims.clone(),
        };
        if let Some(expected) = expected_dims {
            if expected != dims.as_slice() {
                return Err(mismatch(expected));
            }
        }
        if dims.len() < 2 || self.weights.len() != dims.len() - 1 || self.biases.len() != dims.len() - 1 {
            return Err(mismatch(dims));
        }
        let dense = |w: &[Vec<T>], b: &[T], shape: (usize, usize)| -> Option<Dense<T>> {
            if b.len() != shape.1 {
                return None;
            }
            Some(Dense { weights: rows_matrix(w, shape)?, bias: Array1::from_vec(b.to_vec()) })
        };
        let shapes: Vec<(usize, usize)> = dims.windows(2).map(|d| (d[0], d[1])).collect();
        let layers = shapes
            .iter()
            .zip(self.weights.iter().zip(&self.biases))
            .map(|(&shape, (w, b))| dense(w, b, shape))
            .collect::<Option<Vec<_>>>()
            .ok_or_else(|| mismatch(dims))?;
        let net = QNetwork::from_layers(layers);

        let st = &self.optimizer_state;
        let moments = |records: &[MomentRecord<T>]| -> Result<Vec<Dense<T>>, CheckpointError> {
            if records.is_empty() && st.kind == OptimizerKind::Sgd {
                return Ok(Vec::new());
            }
            if records.len() != shapes.len() {
                return Err(mismatch(dims));
            }
            shapes
                .iter()
                .zip(records)
                .map(|(&shape, r)| dense(&r.weights, &r.bias, shape))
                .collect::<Option<Vec<_>>>()
                .ok_or_else(|| mismatch(dims))
        };
        let optimizer = Optimizer {
            kind: st.kind,
            learning_rate: st.learning_rate,
            adam: AdamConfig { beta1: st.beta1, beta2: st.beta2, epsilon: st.epsilon },
            step: st.step,
            first_moments: moments(&st.first_moments)?,
            second_moments: moments(&st.second_moments)?,
        };
        let lexicon = Lexicon::from_record(&self.lexicon)?;
        if lexicon.capacity() != net.output_dim() {
            return Err(mismatch(dims));
        }
        Ok((net, optimizer, lexicon))
    }

    pub fn to_json(&self) -> Result<String, CheckpointError> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self, CheckpointError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn write(&self, path: &Path) -> Result<(), CheckpointError> {
        let json = self.to_json()?;
        std::fs::write(path, json).map_err(|source| CheckpointError::Io { path: path.to_path_buf(), source })
    }

    pub fn read(path: &Path) -> Result<Self, CheckpointError> {
        let text =
            std::fs::read_to_string(path).map_err(|source| CheckpointError::Io { path: path.to_path_buf(), source })?;
        Self::from_json(&text)
    }
}

pub fn save_checkpoint<T: Real>(
    path: &Path,
    net: &QNetwork<T>,
    optimizer: &Optimizer<T>,
    lexicon: &Lexicon,
) -> Result<(), CheckpointError> {
    Checkpoint::capture(net, optimizer, lexicon).write(path)
}

pub fn load_checkpoint<T: Real>(
    path: &Path,
    expected_dims: Option<&[usize]>,
) -> Result<(QNetwork<T>, Optimizer<T>, Lexicon), CheckpointError> {
    Checkpoint::read(path)?.restore(expected_dims)
}
