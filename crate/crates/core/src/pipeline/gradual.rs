use super::data::Dataset;
use super::train::{train, TrainConfig, TrainOutcome};
use super::{fresh_target, prepare};
use crate::config::RunConfig;
use crate::error::Result;
use crate::network::SourceModel;

/// One gradual fine-tuning schedule.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Schedule {
    pub top_l: usize,
    pub use_thresholding: bool,
}

impl Schedule {
    pub fn name(&self) -> String {
        format!("top{}-{}", self.top_l, if self.use_thresholding { "th" } else { "raw" })
    }
}

pub const SCHEDULES: [Schedule; 6] = [
    Schedule { top_l: 0, use_thresholding: false },
    Schedule { top_l: 1, use_thresholding: false },
    Schedule { top_l: 2, use_thresholding: false },
    Schedule { top_l: 1, use_thresholding: true },
    Schedule { top_l: 2, use_thresholding: true },
    Schedule { top_l: 3, use_thresholding: true },
];

/// Trains every schedule in [`SCHEDULES`] from the same source, seed, origins
/// and epoch count; only `top_l` and thresholding vary.
pub fn gradual_ft_suite(source: &SourceModel, raw: &Dataset, cfg: &RunConfig) -> Result<Vec<(Schedule, TrainOutcome)>> {
    let plain = prepare(raw, cfg, false)?;
    let thresholded = prepare(raw, cfg, true)?;
    SCHEDULES
        .iter()
        .map(|&s| {
            let data = if s.use_thresholding { &thresholded } else { &plain };
            let (mut model, mut map) = fresh_target(source, cfg)?;
            let tc = TrainConfig {
                top_l: s.top_l,
                use_thresholding: s.use_thresholding,
                ..TrainConfig::from_run(cfg)
            };
            let out = train(&mut model, source, &mut map, (&data.0, &data.1), &tc, &s.name())?;
            Ok((s, out))
        })
        .collect()
}
