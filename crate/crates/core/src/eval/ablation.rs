use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::metrics::MetricReport;
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::network::{BaselineCnn, Network, SourceModel};
use crate::pipeline::{fresh_target, prepare, train, train_plain, Dataset, TrainConfig, TrainOutcome};

/// Ablation rows in order; each adds one component to the previous one.
pub const ABLATION_TAGS: [&str; 6] = ["baseline-cnn", "tl-plain", "tl-ft", "tl-amt", "tl-amt-kdft", "atl-tdlm-full"];

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub method_tag: String,
    pub seed: u64,
    pub metrics: MetricReport,
    /// Measured training plus classical-stage seconds.
    pub wall_time: f64,
}

/// Training configuration of ablation row `row` (index into [`ABLATION_TAGS`]).
fn row_config(cfg: &RunConfig, row: usize) -> TrainConfig {
    let mut tc = TrainConfig::from_run(cfg);
    tc.top_l = if row <= 1 { 0 } else { cfg.top_l };
    tc.use_thresholding = row >= 3;
    if row < 4 {
        tc.loss.lambda = 0.0;
    }
    if row < 5 {
        tc.loss.beta = 0.0;
        tc.classical = None;
    }
    tc
}

/// Runs the six ablation rows on one seed. Rows share the origin split; the
/// thresholding rows use thresholded variants of the same origins.
pub fn run_ablation(source: &SourceModel, raw: &Dataset, cfg: &RunConfig) -> Result<Vec<AblationRow>> {
    let plain = prepare(raw, cfg, false)?;
    let thresholded = prepare(raw, cfg, true)?;
    let mut rows = Vec::with_capacity(ABLATION_TAGS.len());
    for (row, tag) in ABLATION_TAGS.iter().enumerate() {
        let tc = row_config(cfg, row);
        let data = if tc.use_thresholding { &thresholded } else { &plain };
        let out: TrainOutcome = if row == 0 {
            let [_, h, w] = source.input_shape();
            let mut net = BaselineCnn::new(h, w, crate::seed::mix(cfg.seed, 15))?;
            train_plain(&mut net, (&data.0, &data.1), &tc, tag)?
        } else {
            let (mut model, mut map) = fresh_target(source, cfg)?;
            train(&mut model, source, &mut map, (&data.0, &data.1), &tc, tag)?
        };
        rows.push(AblationRow {
            method_tag: tag.to_string(),
            seed: cfg.seed,
            metrics: out.metrics,
            wall_time: out.log.wall_time,
        });
    }
    Ok(rows)
}

const REPORT_HEADER: &str = "method,seed,accuracy,precision,recall,f1,wall_time";

fn report_csv(rows: &[AblationRow]) -> String {
    let mut out = format!("{REPORT_HEADER}\n");
    for r in rows {
        let m = &r.metrics;
        writeln!(
            out,
            "{},{},{:.6},{:.6},{:.6},{:.6},{:.3}",
            r.method_tag, r.seed, m.accuracy, m.precision, m.recall, m.f1, r.wall_time
        )
        .expect("writing to a string");
    }
    out
}

/// Relative cost label from mean wall time as a share of the slowest method.
fn cost_label(share: f64) -> &'static str {
    if share >= 2.0 / 3.0 {
        "High"
    } else if share >= 1.0 / 3.0 {
        "Medium"
    } else {
        "Low"
    }
}

fn report_summary(rows: &[AblationRow]) -> String {
    // tag -> (first-seen order, accuracies, wall times)
    let mut by_tag: BTreeMap<&str, (usize, Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for (i, r) in rows.iter().enumerate() {
        let e = by_tag.entry(&r.method_tag).or_insert((i, Vec::new(), Vec::new()));
        e.1.push(r.metrics.accuracy);
        e.2.push(r.wall_time);
    }
    let mut tags: Vec<_> = by_tag.into_iter().collect();
    tags.sort_by_key(|(_, (order, _, _))| *order);
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let slowest = tags.iter().map(|(_, (_, _, t))| mean(t)).fold(0.0, f64::max);
    let mut out = String::from("method          runs  mean_acc  std_acc  mean_wall_s  cost\n");
    for (tag, (_, acc, wall)) in &tags {
        let m = mean(acc);
        let sd = (acc.iter().map(|a| (a - m) * (a - m)).sum::<f64>() / acc.len() as f64).sqrt();
        let w = mean(wall);
        let label = if slowest > 0.0 { cost_label(w / slowest) } else { "Low" };
        writeln!(out, "{tag:<15} {:>4}  {m:>8.4}  {sd:>7.4}  {w:>11.2}  {label}", acc.len()).expect("writing to a string");
    }
    out.push_str("cost: High >= 2/3 of the slowest mean wall time, Medium >= 1/3, Low below.\n");
    out
}

/// Writes `ablation.csv` and `summary.txt` into `dir`. Output depends only
/// on `rows`, so re-emitting the same rows reproduces both files exactly.
pub fn emit_report(rows: &[AblationRow], dir: &Path) -> Result<()> {
    if rows.is_empty() {
        return Err(Error::arg("no ablation rows to report"));
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (name, text) in [("ablation.csv", report_csv(rows)), ("summary.txt", report_summary(rows))] {
        let path = dir.join(name);
        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::compute_metrics;

    #[test]
    fn single_row_csv() {
        let row = AblationRow {
            method_tag: "tl-ft".into(),
            seed: 3,
            metrics: compute_metrics(&[1, 0], &[1, 0]).unwrap(),
            wall_time: 1.25,
        };
        let csv = report_csv(std::slice::from_ref(&row));
        assert_eq!(csv, format!("{REPORT_HEADER}\ntl-ft,3,1.000000,1.000000,1.000000,1.000000,1.250\n"));
        assert!(report_summary(&[row]).contains("tl-ft"));
    }

    #[test]
    fn rows_add_components_in_order() {
        let cfg = RunConfig::default();
        let c: Vec<TrainConfig> = (0..6).map(|r| row_config(&cfg, r)).collect();
        assert_eq!(c[1].top_l, 0);
        assert!(c[2].top_l > 0 && !c[2].use_thresholding && c[2].loss.lambda == 0.0);
        assert!(c[3].use_thresholding && c[3].loss.lambda == 0.0);
        assert!(c[4].loss.lambda > 0.0 && c[4].loss.beta == 0.0 && c[4].classical.is_none());
        assert!(c[5].loss.beta > 0.0 && c[5].classical.is_some());
    }
}
