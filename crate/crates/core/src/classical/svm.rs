use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{check_training_set, sigmoid};
use crate::autodiff::{Checkpoint, Tensor};
use crate::error::{Error, Result};
use crate::seed;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SvmConfig {
    pub epochs: usize,
    pub learn_rate: f64,
    /// L2 coefficient on the weight vector.
    pub reg: f64,
}

impl Default for SvmConfig {
    fn default() -> Self {
        SvmConfig {
            epochs: 30,
            learn_rate: 0.01,
            reg: 1e-3,
        }
    }
}

/// Linear max-margin classifier, `decision(x) = w·x + b`; class 1 when positive.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearSvm {
    weight: Vec<f64>,
    bias: f64,
    reg: f64,
    trained: bool,
    /// Regularized hinge objective before training and after each epoch.
    history: Vec<f64>,
}

fn sign(label: usize) -> f64 {
    if label == 1 {
        1.0
    } else {
        -1.0
    }
}

impl LinearSvm {
    pub fn untrained(dims: usize, reg: f64) -> Self {
        LinearSvm {
            weight: vec![0.0; dims],
            bias: 0.0,
            reg,
            trained: false,
            history: Vec::new(),
        }
    }

    pub fn weight(&self) -> &[f64] {
        &self.weight
    }

    pub fn bias(&self) -> f64 {
        self.bias
    }

    pub fn reg(&self) -> f64 {
        self.reg
    }

    pub fn is_trained(&self) -> bool {
        self.trained
    }

    pub fn history(&self) -> &[f64] {
        &self.history
    }

    pub fn decision(&self, x: &[f64]) -> Result<f64> {
        if !self.trained {
            return Err(Error::Untrained("linear SVM"));
        }
        if x.len() != self.weight.len() {
            return Err(Error::shape(format!("SVM over {} features given {}", self.weight.len(), x.len())));
        }
        Ok(dot(&self.weight, x) + self.bias)
    }

    /// `(1 − p, p)` with `p = sigmoid(decision(x))`.
    pub fn score(&self, x: &[f64]) -> Result<[f64; 2]> {
        let p = sigmoid(self.decision(x)?);
        Ok([1.0 - p, p])
    }

    pub fn predict(&self, x: &[f64]) -> Result<usize> {
        Ok(usize::from(self.decision(x)? > 0.0))
    }

    /// `reg/2 · ‖w‖² + mean hinge`.
    pub fn objective(&self, features: &[Vec<f64>], labels: &[usize]) -> f64 {
        let hinge: f64 = features
            .iter()
            .zip(labels)
            .map(|(x, &y)| (1.0 - sign(y) * (dot(&self.weight, x) + self.bias)).max(0.0))
            .sum();
        0.5 * self.reg * dot(&self.weight, &self.weight) + hinge / features.len() as f64
    }

    /// One SGD step on `reg/2 · ‖w‖² + hinge(x, y)`.
    fn step(&mut self, x: &[f64], label: usize, learn_rate: f64, reg: f64) {
        let y = sign(label);
        let margin = y * (dot(&self.weight, x) + self.bias);
        let shrink = 1.0 - learn_rate * reg;
        for w in self.weight.iter_mut() {
            *w *= shrink;
        }
        if margin < 1.0 {
            for (w, v) in self.weight.iter_mut().zip(x) {
                *w += learn_rate * y * v;
            }
            self.bias += learn_rate * y;
        }
    }

    pub fn to_named_tensors(&self, prefix: &str) -> Vec<(String, Tensor)> {
        vec![
            (format!("{prefix}.weight"), Tensor::vector(self.weight.clone())),
            (format!("{prefix}.bias"), Tensor::scalar(self.bias)),
            (format!("{prefix}.reg"), Tensor::scalar(self.reg)),
        ]
    }

    /// Inverse of [`LinearSvm::to_named_tensors`].
    pub fn from_checkpoint(ckpt: &Checkpoint, prefix: &str) -> Result<Self> {
        let get = |part: &str| {
            ckpt.tensor(&format!("{prefix}.{part}"))
                .ok_or_else(|| Error::Format(format!("checkpoint lacks {prefix}.{part}")))
        };
        Ok(LinearSvm {
            weight: get("weight")?.data().to_vec(),
            bias: get("bias")?.item()?,
            reg: get("reg")?.item()?,
            trained: true,
            history: Vec::new(),
        })
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// SGD on the L2-regularized hinge loss, labels mapped to `±1`, one seeded
/// shuffle per epoch.
pub fn svm_train(features: &[Vec<f64>], labels: &[usize], cfg: &SvmConfig, seed: u64) -> Result<LinearSvm> {
    let dims = check_training_set(features, labels)?;
    if !labels.contains(&0) || !labels.contains(&1) {
        return Err(Error::arg("SVM training needs samples of both classes"));
    }
    if cfg.learn_rate < 0.0 || cfg.reg < 0.0 {
        return Err(Error::Config("SVM learn_rate and reg must be non-negative".into()));
    }
    let mut svm = LinearSvm::untrained(dims, cfg.reg);
    svm.history.push(svm.objective(features, labels));
    let mut order: Vec<usize> = (0..features.len()).collect();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut seed::rng(seed, epoch as u64));
        for &i in &order {
            svm.step(&features[i], labels[i], cfg.learn_rate, cfg.reg);
        }
        svm.history.push(svm.objective(features, labels));
    }
    svm.trained = true;
    Ok(svm)
}

/// Per-class score vector of a trained SVM.
pub fn svm_score(model: &LinearSvm, x: &[f64]) -> Result<[f64; 2]> {
    model.score(x)
}
