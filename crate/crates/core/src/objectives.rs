//! Training objectives: cross-entropy, the parameter adaptation penalty, the
//! pairwise contrastive loss and their weighted sum.
//!
//! Each loss has a tape form (for training) and a plain value form computed
//! directly from the formula, independent of the tape.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::network::LayerMap;

/// Sign of the negative-pair term in the contrastive loss.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CrlSign {
    /// `Σ_P d − Σ_N exp(−αd)`; minimized by pulling negatives together.
    AsWritten,
    /// `Σ_P d + Σ_N exp(−αd)`; pushes negatives apart.
    Separability,
}

/// Which embedding the contrastive loss sees.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CrlFeatures {
    /// Concatenated per-stage pooled backbone features.
    Mcfe,
    /// The last hidden dense activation.
    Penultimate,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    /// Weight of the adaptation penalty.
    pub lambda: f64,
    /// Decay rate of the negative-pair term.
    pub alpha: f64,
    /// Weight of the contrastive loss in the total.
    pub beta: f64,
    pub crl_sign: CrlSign,
    pub crl_features: CrlFeatures,
    /// Scale each embedding to unit length before the contrastive loss, so
    /// negative-pair distances stay in the range where `exp(−αd)` is not flat.
    pub crl_normalize: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            lambda: 1e-3,
            alpha: 1.0,
            beta: 0.1,
            crl_sign: CrlSign::Separability,
            crl_features: CrlFeatures::Mcfe,
            crl_normalize: true,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.beta >= 0.0 && self.alpha > 0.0) {
            return Err(Error::Config(format!(
                "need lambda >= 0, alpha > 0, beta >= 0; got {}, {}, {}",
                self.lambda, self.alpha, self.beta
            )));
        }
        Ok(())
    }
}

/// `−log softmax(logits)[label]`, stabilized by max-subtraction.
pub fn cross_entropy(logits: &Tensor, label: usize) -> Result<f64> {
    let x = logits.data();
    if label >= x.len() {
        return Err(Error::arg(format!("label {label} out of range for {} classes", x.len())));
    }
    let max = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + x.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    Ok(lse - x[label])
}

/// One shared tensor's contribution to the adaptation penalty, as tape handles.
#[derive(Clone, Copy, Debug)]
pub struct KdTerm {
    pub target: Var,
    pub source: Var,
    pub linear: Var,
    pub offset: Var,
}

/// `λ · Σ ‖W_T − (M·W_S + b)‖²` on the tape. Returns `None` when there is nothing to add.
pub fn kd_penalty(tape: &mut Tape, terms: &[KdTerm], lambda: f64) -> Result<Option<Var>> {
    if lambda == 0.0 || terms.is_empty() {
        return Ok(None);
    }
    let mut parts = Vec::with_capacity(terms.len());
    for t in terms {
        let n = tape.value(t.source).numel();
        if tape.value(t.target).shape() != tape.value(t.source).shape() {
            return Err(Error::shape(format!(
                "adaptation penalty: target {:?} vs source {:?}",
                tape.value(t.target).shape(),
                tape.value(t.source).shape()
            )));
        }
        let mapped = if tape.value(t.linear).rank() == 2 {
            let flat = tape.reshape(t.source, vec![n])?;
            tape.dense(flat, t.linear, t.offset)?
        } else {
            let flat = tape.reshape(t.source, vec![n])?;
            tape.scale_shift(flat, t.linear, t.offset)?
        };
        let target = tape.reshape(t.target, vec![n])?;
        let diff = tape.sub(target, mapped)?;
        parts.push(tape.sum_squares(diff));
    }
    let total = tape.add_n(&parts)?;
    Ok(Some(tape.scale(total, lambda)))
}

/// Value form of [`kd_penalty`] over `(target, source, map)` triples.
pub fn kd_penalty_value(layers: &[(&Tensor, &Tensor, &LayerMap)], lambda: f64) -> Result<f64> {
    let mut total = 0.0;
    for (i, (target, source, map)) in layers.iter().enumerate() {
        if target.shape() != source.shape() {
            return Err(Error::shape(format!(
                "adaptation penalty layer {i}: target {:?} vs source {:?}",
                target.shape(),
                source.shape()
            )));
        }
        let mapped = map.apply(&format!("layer {i}"), source)?;
        total += target
            .data()
            .iter()
            .zip(mapped.data())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>();
    }
    Ok(lambda * total)
}

/// Positive (same label) and negative (different label) index pairs, `i < j`.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct PairSet {
    pub positives: Vec<(usize, usize)>,
    pub negatives: Vec<(usize, usize)>,
}

impl PairSet {
    pub fn is_empty(&self) -> bool {
        self.positives.is_empty() && self.negatives.is_empty()
    }
}

/// Every unordered pair in the batch. A batch of fewer than two samples
/// yields an empty set; callers can detect it with [`PairSet::is_empty`].
pub fn mine_pairs(labels: &[usize]) -> PairSet {
    let mut pairs = PairSet::default();
    for i in 0..labels.len() {
        for j in i + 1..labels.len() {
            if labels[i] == labels[j] {
                pairs.positives.push((i, j));
            } else {
                pairs.negatives.push((i, j));
            }
        }
    }
    pairs
}

fn check_pairs(pairs: &PairSet, n: usize) -> Result<()> {
    let bad = pairs.positives.iter().chain(&pairs.negatives).find(|&&(i, j)| i >= n || j >= n);
    if let Some((i, j)) = bad {
        return Err(Error::arg(format!("pair ({i}, {j}) out of range for {n} embeddings")));
    }
    Ok(())
}

/// Contrastive loss on the tape. Returns a zero constant when there are no pairs.
pub fn crl_loss(tape: &mut Tape, embeddings: &[Var], pairs: &PairSet, alpha: f64, sign: CrlSign) -> Result<Var> {
    if alpha <= 0.0 {
        return Err(Error::arg(format!("alpha must be positive, got {alpha}")));
    }
    if let Some(first) = embeddings.first() {
        let len = tape.value(*first).numel();
        if len == 0 || embeddings.iter().any(|e| tape.value(*e).numel() != len) {
            return Err(Error::arg("embeddings must be non-empty and of equal length"));
        }
    }
    check_pairs(pairs, embeddings.len())?;
    let mut terms = Vec::with_capacity(pairs.positives.len() + pairs.negatives.len());
    for &(i, j) in &pairs.positives {
        terms.push(tape.distance(embeddings[i], embeddings[j])?);
    }
    let factor = match sign {
        CrlSign::AsWritten => -1.0,
        CrlSign::Separability => 1.0,
    };
    for &(i, j) in &pairs.negatives {
        let d = tape.distance(embeddings[i], embeddings[j])?;
        let scaled = tape.scale(d, -alpha);
        let e = tape.exp(scaled);
        terms.push(tape.scale(e, factor));
    }
    if terms.is_empty() {
        return Ok(tape.constant(Tensor::scalar(0.0)));
    }
    tape.add_n(&terms)
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Value form of [`crl_loss`].
pub fn crl_loss_value(embeddings: &[Tensor], pairs: &PairSet, alpha: f64, sign: CrlSign) -> Result<f64> {
    if alpha <= 0.0 {
        return Err(Error::arg(format!("alpha must be positive, got {alpha}")));
    }
    if let Some(first) = embeddings.first() {
        let len = first.numel();
        if len == 0 || embeddings.iter().any(|e| e.numel() != len) {
            return Err(Error::arg("embeddings must be non-empty and of equal length"));
        }
    }
    check_pairs(pairs, embeddings.len())?;
    let d = |(i, j): (usize, usize)| euclid(embeddings[i].data(), embeddings[j].data());
    let pos: f64 = pairs.positives.iter().map(|&p| d(p)).sum();
    let neg: f64 = pairs.negatives.iter().map(|&p| (-alpha * d(p)).exp()).sum();
    Ok(match sign {
        CrlSign::AsWritten => pos - neg,
        CrlSign::Separability => pos + neg,
    })
}

/// `mean CE + kd + β·crl` on the tape.
pub fn total_loss(
    tape: &mut Tape,
    logits: &[Var],
    labels: &[usize],
    kd: Option<Var>,
    crl: Option<Var>,
    cfg: &LossConfig,
) -> Result<Var> {
    if logits.len() != labels.len() || logits.is_empty() {
        return Err(Error::arg(format!("{} logit vectors for {} labels", logits.len(), labels.len())));
    }
    let ces = logits
        .iter()
        .zip(labels)
        .map(|(&l, &y)| tape.cross_entropy(l, y))
        .collect::<Result<Vec<_>>>()?;
    let sum = tape.add_n(&ces)?;
    let mut parts = vec![tape.scale(sum, 1.0 / labels.len() as f64)];
    if let Some(kd) = kd {
        parts.push(kd);
    }
    if let Some(crl) = crl.filter(|_| cfg.beta != 0.0) {
        parts.push(tape.scale(crl, cfg.beta));
    }
    if parts.len() == 1 {
        return Ok(parts[0]);
    }
    tape.add_n(&parts)
}

/// Value form of [`total_loss`] from already computed parts.
pub fn total_loss_value(mean_ce: f64, kd: f64, crl: f64, cfg: &LossConfig) -> f64 {
    mean_ce + kd + cfg.beta * crl
}
