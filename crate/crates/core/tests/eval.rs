use proptest::prelude::*;

use thermobreath::eval::{compute_metrics, emit_report, gradient_suite, AblationRow, ABLATION_TAGS};

/// Counts read straight off the definitions, one sample at a time.
fn brute(preds: &[usize], labels: &[usize]) -> (f64, Option<f64>, Option<f64>) {
    let (mut tp, mut fp, mut fn_) = (0.0, 0.0, 0.0);
    let mut hits = 0.0;
    for (&p, &y) in preds.iter().zip(labels) {
        if p == y {
            hits += 1.0;
        }
        match (p, y) {
            (1, 1) => tp += 1.0,
            (1, 0) => fp += 1.0,
            (0, 1) => fn_ += 1.0,
            _ => {}
        }
    }
    let precision = (tp + fp > 0.0).then(|| tp / (tp + fp));
    let recall = (tp + fn_ > 0.0).then(|| tp / (tp + fn_));
    (hits / labels.len() as f64, precision, recall)
}

fn pairs() -> impl Strategy<Value = Vec<(usize, usize)>> {
    prop::collection::vec((0usize..2, 0usize..2), 1..60)
}

proptest! {
    #[test]
    fn metrics_match_brute_force(v in pairs()) {
        let (preds, labels): (Vec<_>, Vec<_>) = v.into_iter().unzip();
        let m = compute_metrics(&preds, &labels).unwrap();
        let (acc, p, r) = brute(&preds, &labels);
        prop_assert!((m.accuracy - acc).abs() < 1e-12);
        prop_assert!((m.precision - p.unwrap_or(0.0)).abs() < 1e-12);
        prop_assert!((m.recall - r.unwrap_or(0.0)).abs() < 1e-12);
        if let (Some(p), Some(r)) = (p, r) {
            if p + r > 0.0 {
                prop_assert!((m.f1 - 2.0 * p * r / (p + r)).abs() < 1e-12);
            }
        }
        prop_assert_eq!(m.total(), labels.len());
        prop_assert_eq!(m.confusion.iter().flatten().sum::<usize>(), labels.len());
    }

    #[test]
    fn metrics_ignore_sample_order(v in pairs(), rot in 0usize..60) {
        let (preds, labels): (Vec<_>, Vec<_>) = v.iter().copied().unzip();
        let mut w = v.clone();
        w.rotate_left(rot % v.len());
        w.reverse();
        let (p2, l2): (Vec<_>, Vec<_>) = w.into_iter().unzip();
        prop_assert_eq!(compute_metrics(&preds, &labels).unwrap(), compute_metrics(&p2, &l2).unwrap());
    }
}

fn rows() -> Vec<AblationRow> {
    let mut out = Vec::new();
    for seed in 1..=2 {
        for (i, tag) in ABLATION_TAGS.iter().enumerate() {
            let preds: Vec<usize> = (0..20).map(|k| usize::from(k % (i + 2) != 0)).collect();
            let labels: Vec<usize> = (0..20).map(|k| k % 2).collect();
            out.push(AblationRow {
                method_tag: tag.to_string(),
                seed,
                metrics: compute_metrics(&preds, &labels).unwrap(),
                wall_time: 1.5 * (i + 1) as f64,
            });
        }
    }
    out
}

#[test]
fn report_is_reproducible() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    emit_report(&rows(), a.path()).unwrap();
    emit_report(&rows(), b.path()).unwrap();
    for name in ["ablation.csv", "summary.txt"] {
        let x = std::fs::read(a.path().join(name)).unwrap();
        assert_eq!(x, std::fs::read(b.path().join(name)).unwrap(), "{name}");
    }
    let csv = std::fs::read_to_string(a.path().join("ablation.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("method,seed,accuracy,precision,recall,f1,wall_time"));
    assert_eq!(csv.lines().count(), 13);
    let summary = std::fs::read_to_string(a.path().join("summary.txt")).unwrap();
    for tag in ABLATION_TAGS {
        assert!(summary.contains(tag), "{tag}");
    }
    assert!(emit_report(&[], a.path()).is_err());
}

#[test]
fn gradient_suite_covers_two_seeds() {
    let cases = gradient_suite(3..5).unwrap();
    assert!(cases.iter().any(|c| c.name == "total_loss" && c.seed == 4));
    let worst = cases.iter().map(|c| c.error).fold(0.0, f64::max);
    assert!(worst < 1e-4, "{worst}");
}
