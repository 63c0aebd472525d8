use crate::error::{Error, Result};

/// Binary classification summary with EXH (class 1) as the positive class.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricReport {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// `confusion[actual][predicted]`.
    pub confusion: [[usize; 2]; 2],
    /// Samples per actual class.
    pub support: [usize; 2],
    /// Set when precision, recall or f1 had a zero denominator and was reported as 0.
    pub undefined: bool,
}

impl MetricReport {
    pub fn total(&self) -> usize {
        self.support[0] + self.support[1]
    }
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

pub fn compute_metrics(predictions: &[usize], labels: &[usize]) -> Result<MetricReport> {
    if predictions.len() != labels.len() {
        return Err(Error::shape(format!(
            "{} predictions for {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    if labels.is_empty() {
        return Err(Error::arg("metrics need at least one sample"));
    }
    let mut confusion = [[0usize; 2]; 2];
    for (&p, &y) in predictions.iter().zip(labels) {
        if p > 1 || y > 1 {
            return Err(Error::arg(format!("class index out of range: predicted {p}, actual {y}")));
        }
        confusion[y][p] += 1;
    }
    let (tn, fp, fn_, tp) = (confusion[0][0], confusion[0][1], confusion[1][0], confusion[1][1]);
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    // f1 = 2TP / (2TP + FP + FN), the harmonic mean written over counts.
    let f1 = ratio(2 * tp, 2 * tp + fp + fn_);
    Ok(MetricReport {
        accuracy: (tp + tn) as f64 / labels.len() as f64,
        precision: precision.unwrap_or(0.0),
        recall: recall.unwrap_or(0.0),
        f1: f1.unwrap_or(0.0),
        confusion,
        support: [tn + fp, fn_ + tp],
        undefined: precision.is_none() || recall.is_none() || f1.is_none(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn worked_confusion() {
        // TP=3, FP=1, FN=1, TN=5
        let labels = [1, 1, 1, 1, 0, 0, 0, 0, 0, 0];
        let preds = [1, 1, 1, 0, 1, 0, 0, 0, 0, 0];
        let m = compute_metrics(&preds, &labels).unwrap();
        assert_eq!(m.confusion, [[5, 1], [1, 3]]);
        assert!((m.accuracy - 0.8).abs() < 1e-12);
        assert!((m.precision - 0.75).abs() < 1e-12);
        assert!((m.recall - 0.75).abs() < 1e-12);
        assert!((m.f1 - 0.75).abs() < 1e-12);
        assert!(!m.undefined);
    }

    #[test]
    fn extremes() {
        let m = compute_metrics(&[0, 1, 1], &[0, 1, 1]).unwrap();
        assert_eq!((m.accuracy, m.precision, m.recall, m.f1), (1.0, 1.0, 1.0, 1.0));
        let m = compute_metrics(&[1, 0], &[0, 1]).unwrap();
        assert_eq!(m.accuracy, 0.0);
        let m = compute_metrics(&[0, 0], &[0, 0]).unwrap();
        assert!(m.undefined);
        assert_eq!(m.precision, 0.0);
        assert!(compute_metrics(&[0], &[0, 1]).is_err());
    }
}
