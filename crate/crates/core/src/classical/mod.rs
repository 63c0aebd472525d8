//! Classical classifiers over deep features and their score-level ensemble.

mod ensemble;
mod forest;
mod svm;

pub use ensemble::{ensemble_predict, fuse, EnsembleWeights};
pub use forest::{rf_score, rf_train, ForestConfig, RandomForest, Tree, FOREST_TAG};
pub use svm::{svm_score, svm_train, LinearSvm, SvmConfig};

use crate::autodiff::{Checkpoint, Tensor};
use crate::error::{Error, Result};

/// Logistic function, evaluated without overflow for large `|z|`.
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Validates a binary training set and returns its feature dimension.
fn check_training_set(features: &[Vec<f64>], labels: &[usize]) -> Result<usize> {
    if features.len() != labels.len() {
        return Err(Error::shape(format!("{} feature rows for {} labels", features.len(), labels.len())));
    }
    let dims = features.first().map_or(0, Vec::len);
    if dims == 0 {
        return Err(Error::arg("empty feature set"));
    }
    if features.iter().any(|f| f.len() != dims) {
        return Err(Error::shape("feature rows differ in length"));
    }
    if let Some(y) = labels.iter().find(|&&y| y > 1) {
        return Err(Error::arg(format!("label {y} is not binary")));
    }
    Ok(dims)
}

/// Per-feature standardization `(x − mean) / std`, fitted on training rows.
/// Constant features keep unit scale.
#[derive(Clone, Debug, PartialEq)]
pub struct Standardizer {
    mean: Vec<f64>,
    std: Vec<f64>,
}

impl Standardizer {
    pub fn fit(rows: &[Vec<f64>]) -> Result<Self> {
        let dims = rows.first().map_or(0, Vec::len);
        if dims == 0 || rows.iter().any(|r| r.len() != dims) {
            return Err(Error::shape("standardizer needs equal-length, non-empty rows"));
        }
        let n = rows.len() as f64;
        let mut mean = vec![0.0; dims];
        for r in rows {
            for (m, v) in mean.iter_mut().zip(r) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; dims];
        for r in rows {
            for ((s, v), m) in var.iter_mut().zip(r).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let std = var
            .into_iter()
            .map(|s| {
                let sd = (s / n).sqrt();
                if sd > 1e-12 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Ok(Standardizer { mean, std })
    }

    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.mean.len() {
            return Err(Error::shape(format!("standardizer over {} features given {}", self.mean.len(), x.len())));
        }
        Ok(x.iter().zip(&self.mean).zip(&self.std).map(|((v, m), s)| (v - m) / s).collect())
    }

    pub fn to_named_tensors(&self, prefix: &str) -> Vec<(String, Tensor)> {
        vec![
            (format!("{prefix}.mean"), Tensor::vector(self.mean.clone())),
            (format!("{prefix}.std"), Tensor::vector(self.std.clone())),
        ]
    }

    pub fn from_checkpoint(ckpt: &Checkpoint, prefix: &str) -> Result<Self> {
        let get = |part: &str| {
            ckpt.tensor(&format!("{prefix}.{part}"))
                .map(|t| t.data().to_vec())
                .ok_or_else(|| Error::Format(format!("checkpoint lacks {prefix}.{part}")))
        };
        let (mean, std) = (get("mean")?, get("std")?);
        if mean.len() != std.len() {
            return Err(Error::Format("standardizer mean and std differ in length".into()));
        }
        Ok(Standardizer { mean, std })
    }
}
