use crate::error::{Error, Result};

/// Non-negative per-model weights, normalized to sum to one.
#[derive(Clone, Debug, PartialEq)]
pub struct EnsembleWeights {
    weights: Vec<f64>,
}

impl EnsembleWeights {
    pub fn new(raw: &[f64]) -> Result<Self> {
        if raw.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::arg(format!("ensemble weights must be finite and non-negative: {raw:?}")));
        }
        let total: f64 = raw.iter().sum();
        if total <= 0.0 {
            return Err(Error::arg("at least one ensemble weight must be positive"));
        }
        Ok(EnsembleWeights {
            weights: raw.iter().map(|w| w / total).collect(),
        })
    }

    pub fn uniform(model_count: usize) -> Result<Self> {
        EnsembleWeights::new(&vec![1.0; model_count])
    }

    pub fn model_count(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
}

/// `Σ_m w_m · scores_m`, elementwise.
pub fn fuse(scores: &[[f64; 2]], weights: &EnsembleWeights) -> Result<[f64; 2]> {
    if scores.len() != weights.model_count() {
        return Err(Error::shape(format!(
            "{} score vectors for {} ensemble weights",
            scores.len(),
            weights.model_count()
        )));
    }
    let mut fused = [0.0; 2];
    for (s, w) in scores.iter().zip(weights.weights()) {
        fused[0] += w * s[0];
        fused[1] += w * s[1];
    }
    Ok(fused)
}

/// Class with the largest fused score; ties go to the lower class.
pub fn ensemble_predict(scores: &[[f64; 2]], weights: &EnsembleWeights) -> Result<usize> {
    let fused = fuse(scores, weights)?;
    Ok(usize::from(fused[1] > fused[0]))
}
