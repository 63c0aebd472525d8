//! Datasets, the synthetic generator, training and fine-tuning schedules.

mod artifacts;
mod data;
mod gradual;
mod log;
mod synth;
mod train;

pub use artifacts::TrainedModel;
pub use data::{
    expand_dataset, ingest, resample_balance, split, BalanceState, Dataset, Label, LabeledSample, Manifest, PhaseTag,
};
pub use gradual::{gradual_ft_suite, Schedule, SCHEDULES};
pub use log::{EpochRecord, RunLog, RUNLOG_HEADER};
pub use synth::{
    pretext_generate, synth_generate, synth_generate_styled, synth_image, Phase, SynthStyle, PLUME_CENTER,
    PRETEXT_CENTERS,
};
pub use train::{
    examples, fit, predict, pretrain_source, train, train_plain, ClassicalConfig, ClassicalModels, Example, FitSpec,
    KdSource, TrainConfig, TrainOutcome,
};

use crate::config::RunConfig;
use crate::error::Result;
use crate::network::{build_target_with, AdaptationMap, SourceModel, TargetModel};

/// Balances, expands and splits a raw dataset per `cfg`, returning
/// `(train, val)`. Thresholding follows `use_thresholding`.
pub fn prepare(raw: &Dataset, cfg: &RunConfig, use_thresholding: bool) -> Result<(Dataset, Dataset)> {
    let balanced = resample_balance(raw, crate::seed::mix(cfg.seed, 11))?;
    let expanded = expand_dataset(&balanced, cfg.copies, use_thresholding, crate::seed::mix(cfg.seed, 12))?;
    split(&expanded, cfg.train_fraction, crate::seed::mix(cfg.seed, 13))
}

/// A fresh target on `source` with an identity map of the configured kind.
pub fn fresh_target(source: &SourceModel, cfg: &RunConfig) -> Result<(TargetModel, AdaptationMap)> {
    let map = AdaptationMap::identity(source, cfg.map_kind);
    let model = build_target_with(source, &map, crate::seed::mix(cfg.seed, 14))?;
    Ok((model, map))
}
