//! Metrics, the ablation harness and report writers.

mod ablation;
mod gradients;
mod metrics;

pub use ablation::{emit_report, run_ablation, AblationRow, ABLATION_TAGS};
pub use gradients::{gradient_suite, GradCase, GRAD_STEP};
pub use metrics::{compute_metrics, MetricReport};
