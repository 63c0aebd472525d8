use std::fs;
use std::path::Path;

use thermobreath::config::RunConfig;
use thermobreath::imaging::{write_pgm, Scale, Thermogram};
use thermobreath::network::{build_source, Group, Network};
use thermobreath::pipeline::{
    expand_dataset, fresh_target, ingest, prepare, resample_balance, split, synth_generate, synth_image, train,
    BalanceState, Label, Phase, SynthStyle, TrainConfig, TrainedModel, PLUME_CENTER, RUNLOG_HEADER,
};
use thermobreath::seed;

fn small_config() -> RunConfig {
    RunConfig::from_toml_str(
        "image_size = 32\nn_per_class = 6\ncopies = 2\nepochs = 2\nbatch_size = 4\nrf_trees = 5\nsvm_epochs = 5\n",
    )
    .unwrap()
}

fn write_class(dir: &Path, n: usize, value: f64) {
    fs::create_dir_all(dir).unwrap();
    for i in 0..n {
        let t = Thermogram::filled(8, 8, (value + i as f64) % 256.0, Scale::Byte).unwrap();
        write_pgm(&t, &dir.join(format!("{i:05}.pgm"))).unwrap();
    }
}

#[test]
fn synth_counts_and_determinism() {
    let a = synth_generate(10, (32, 32), 3, true).unwrap();
    assert_eq!(a.len(), 20);
    assert_eq!(a.counts(), [10, 10]);
    assert_eq!(a.origins().len(), 20);
    assert_eq!(synth_generate(10, (32, 32), 3, true).unwrap(), a);
    assert_ne!(synth_generate(10, (32, 32), 4, true).unwrap(), a);
}

#[test]
fn plume_region_brightness_follows_phase() {
    let (h, w) = (64, 64);
    let (cy, cx) = ((PLUME_CENTER.0 * h as f64) as usize, (PLUME_CENTER.1 * w as f64) as usize);
    let mean = |phase: Phase| {
        let mut total = 0.0;
        for i in 0..100 {
            let img = synth_image(phase, (h, w), &SynthStyle::default(), &mut seed::rng(17, i)).unwrap();
            for y in cy - 2..=cy + 2 {
                for x in cx - 2..=cx + 2 {
                    total += img.get(y, x);
                }
            }
        }
        total / (100.0 * 25.0)
    };
    let m = [Phase::ExhFull, Phase::ExhMid, Phase::InhMid, Phase::InhFull].map(mean);
    assert!(m[0] > m[1] && m[1] > m[2] && m[2] > m[3], "{m:?}");
}

#[test]
fn ingest_balance_expand_arithmetic() {
    let dir = tempfile::tempdir().unwrap();
    write_class(&dir.path().join("exh"), 3, 200.0);
    write_class(&dir.path().join("inh"), 5, 20.0);
    let manifest = dir.path().join("manifest.txt");
    fs::write(&manifest, "# two classes\nEXH = exh\nINH = inh\n").unwrap();
    let raw = ingest(&manifest).unwrap();
    assert_eq!(raw.counts(), [5, 3]);
    assert_eq!(raw.samples[0].label, Label::Exh);
    let balanced = resample_balance(&raw, 1).unwrap();
    assert_eq!(balanced.counts(), [5, 5]);
    assert_eq!(balanced.balance_state, BalanceState::Balanced);
    let expanded = expand_dataset(&balanced, 5, true, 2).unwrap();
    assert_eq!(expanded.counts(), [25, 25]);
    assert!(expanded
        .samples
        .iter()
        .all(|s| s.image.pixels().iter().all(|v| (0.0..=1.0).contains(v))));
}

#[test]
fn missing_class_directory_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = dir.path().join("m.txt");
    fs::write(&manifest, "EXH = nowhere\n").unwrap();
    assert!(ingest(&manifest).is_err());
    fs::write(&manifest, "SIGH = x\n").unwrap();
    assert!(ingest(&manifest).is_err());
}

#[test]
fn split_keeps_origins_together() {
    let raw = synth_generate(10, (16, 16), 5, false).unwrap();
    let expanded = expand_dataset(&raw, 3, false, 6).unwrap();
    let (tr, va) = split(&expanded, 0.8, 7).unwrap();
    assert_eq!(tr.counts(), [24, 24]);
    assert_eq!(va.counts(), [6, 6]);
    assert!(tr.origins().is_disjoint(&va.origins()));
    assert!(split(&expanded, 1.0, 7).is_err());
}

#[test]
fn zero_step_size_leaves_parameters_untouched() {
    let mut cfg = small_config();
    cfg.learn_rate = 0.0;
    cfg.lambda = 0.0;
    cfg.beta = 0.0;
    cfg.ensemble = false;
    let source = build_source(&cfg.model(), 1).unwrap();
    let raw = synth_generate(cfg.n_per_class, (32, 32), cfg.seed, true).unwrap();
    let data = prepare(&raw, &cfg, true).unwrap();
    let (mut model, mut map) = fresh_target(&source, &cfg).unwrap();
    let before = model.params().clone();
    let out = train(&mut model, &source, &mut map, (&data.0, &data.1), &TrainConfig::from_run(&cfg), "t").unwrap();
    assert_eq!(model.params(), &before);
    assert_eq!(out.log.records.len(), cfg.epochs);
}

#[test]
fn frozen_groups_survive_training() {
    let cfg = small_config();
    let source = build_source(&cfg.model(), 1).unwrap();
    let raw = synth_generate(cfg.n_per_class, (32, 32), cfg.seed, true).unwrap();
    let data = prepare(&raw, &cfg, true).unwrap();
    let (mut model, mut map) = fresh_target(&source, &cfg).unwrap();
    let frozen = |g: Group| !matches!(g, Group::Head | Group::Stage(3) | Group::Stage(4));
    let before = model.params().checksum(frozen);
    let head = model.params().checksum(|g| g == Group::Head);
    train(&mut model, &source, &mut map, (&data.0, &data.1), &TrainConfig::from_run(&cfg), "t").unwrap();
    assert_eq!(model.params().checksum(frozen), before);
    assert_ne!(model.params().checksum(|g| g == Group::Head), head);
}

#[test]
fn training_is_deterministic_and_checkpoints_round_trip() {
    let cfg = small_config();
    let source = build_source(&cfg.model(), 2).unwrap();
    let raw = synth_generate(cfg.n_per_class, (32, 32), cfg.seed, true).unwrap();
    let data = prepare(&raw, &cfg, true).unwrap();
    let run = || {
        let (mut model, mut map) = fresh_target(&source, &cfg).unwrap();
        let out = train(&mut model, &source, &mut map, (&data.0, &data.1), &TrainConfig::from_run(&cfg), "t").unwrap();
        let trained = TrainedModel {
            model,
            map,
            classical: out.classical.clone(),
        };
        (trained, out)
    };
    let (a, out_a) = run();
    let (b, out_b) = run();
    let csv = out_a.log.to_csv();
    assert_eq!(csv, out_b.log.to_csv());
    assert_eq!(csv.lines().next(), Some(RUNLOG_HEADER));
    assert_eq!(csv.lines().count(), cfg.epochs + 1);
    let bytes = a.to_checkpoint().to_bytes();
    assert_eq!(bytes, b.to_checkpoint().to_bytes());

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    a.save(&path).unwrap();
    let back = TrainedModel::load(&path).unwrap();
    assert_eq!(back.model.params(), a.model.params());
    assert_eq!(back.map, a.map);
    assert_eq!(back.to_checkpoint().to_bytes(), bytes);
    assert!(back.classical.is_some());
    assert_eq!(back.predict(&data.1).unwrap(), out_a.predictions);
}
