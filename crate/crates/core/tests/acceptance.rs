//! End-to-end acceptance suite. Runs every criterion, prints one PASS/FAIL
//! line each, and exits nonzero if any failed.

use std::fs;
use std::path::Path;
use std::time::Instant;

use thermobreath::autodiff::read_checkpoint;
use thermobreath::classical::{ensemble_predict, fuse, EnsembleWeights};
use thermobreath::config::RunConfig;
use thermobreath::eval::{gradient_suite, run_ablation, AblationRow, ABLATION_TAGS};
use thermobreath::imaging::{amt_threshold, write_pgm, Cell, Scale, Thermogram, THRESHOLD_GRID};
use thermobreath::network::{build_source, build_target, ModelConfig, Network, SourceModel};
use thermobreath::objectives::{crl_loss_value, mine_pairs, CrlSign};
use thermobreath::pipeline::{
    expand_dataset, fresh_target, gradual_ft_suite, ingest, prepare, pretrain_source, resample_balance, synth_generate,
    train, Schedule, TrainConfig, TrainedModel,
};
use thermobreath::seed;

use rand::Rng;

const GRAD_TOLERANCE: f64 = 1e-4;
const GRAD_SEEDS: u64 = 20;
const CLOSED_FORM_TOLERANCE: f64 = 1e-10;
const TARGET_ACCURACY: f64 = 0.95;
const ABLATION_MARGIN: f64 = 0.02;
const SEEDS: std::ops::RangeInclusive<u64> = 1..=5;
const SOURCE_SEED: u64 = 99;

type Outcome = Result<String, String>;

fn within(actual: usize, listed: f64, rel: f64) -> bool {
    (actual as f64 - listed).abs() <= rel * listed
}

fn architecture() -> Outcome {
    let source = build_source(&ModelConfig::full(), 0).map_err(|e| e.to_string())?;
    let target = build_target(&source).map_err(|e| e.to_string())?;
    let (sp, tp) = (source.params(), target.params());
    let exact = [
        ("stem.conv1", tp.count_prefix("stem.conv1."), 30),
        ("stem.conv2", tp.count_prefix("stem.conv2."), 84),
        ("head.output", tp.count_prefix("head.output."), 258),
        ("head.dense1", tp.count_prefix("head.dense1."), 262_272),
    ];
    let rounded = [
        ("conv1", sp.count_prefix("conv1."), 9.4e3),
        ("stage1", sp.count_prefix("stage1."), 219e3),
        ("stage2", sp.count_prefix("stage2."), 850e3),
        ("stage3", sp.count_prefix("stage3."), 3.6e6),
        ("stage4", sp.count_prefix("stage4."), 14.2e6),
        ("fc", sp.count_prefix("fc."), 2.1e6),
    ];
    let mut bad = Vec::new();
    for (name, got, want) in exact {
        if got != want {
            bad.push(format!("{name} {got} != {want}"));
        }
    }
    for (name, got, want) in rounded {
        if !within(got, want, 0.01) {
            bad.push(format!("{name} {got} vs {want}"));
        }
    }
    let total = tp.count();
    if !within(total, 23.85e6, 0.01) {
        bad.push(format!("target total {total} vs 23.85M"));
    }
    let detail = rounded
        .iter()
        .map(|(n, c, _)| format!("{n}={c}"))
        .chain([format!("total={total}")])
        .collect::<Vec<_>>()
        .join(" ");
    if bad.is_empty() {
        Ok(detail)
    } else {
        Err(format!("{} ({detail})", bad.join("; ")))
    }
}

fn write_class(dir: &Path, n: usize, value: u8) -> Result<(), String> {
    fs::create_dir_all(dir).map_err(|e| e.to_string())?;
    let img = Thermogram::filled(16, 16, f64::from(value), Scale::Byte).map_err(|e| e.to_string())?;
    for i in 0..n {
        write_pgm(&img, &dir.join(format!("{i:05}.pgm"))).map_err(|e| e.to_string())?;
    }
    Ok(())
}

fn dataset_arithmetic() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    write_class(&dir.path().join("exh"), 902, 180)?;
    write_class(&dir.path().join("inh"), 1198, 40)?;
    let manifest = dir.path().join("manifest.txt");
    fs::write(&manifest, "EXH = exh\nINH = inh\n").map_err(|e| e.to_string())?;
    let raw = ingest(&manifest).map_err(|e| e.to_string())?;
    let balanced = resample_balance(&raw, 1).map_err(|e| e.to_string())?;
    let expanded = expand_dataset(&balanced, 5, true, 2).map_err(|e| e.to_string())?;
    let flow = [raw.counts(), balanced.counts(), expanded.counts()];
    let text = flow.map(|[inh, exh]| format!("{exh}/{inh}")).join(" -> ");
    if flow == [[1198, 902], [1198, 1198], [5990, 5990]] {
        Ok(text)
    } else {
        Err(text)
    }
}

fn gradients() -> Outcome {
    let cases = gradient_suite(0..GRAD_SEEDS).map_err(|e| e.to_string())?;
    let worst = cases
        .iter()
        .max_by(|a, b| a.error.total_cmp(&b.error))
        .ok_or("no gradient cases")?;
    let kinds = cases.iter().map(|c| c.name).collect::<std::collections::BTreeSet<_>>().len();
    let text = format!(
        "{} checks over {kinds} functions x {GRAD_SEEDS} seeds, worst {:.2e} ({} seed {})",
        cases.len(),
        worst.error,
        worst.name,
        worst.seed
    );
    if worst.error < GRAD_TOLERANCE {
        Ok(text)
    } else {
        Err(text)
    }
}

fn threshold_oracle() -> Outcome {
    let mut mismatches = 0;
    for i in 0..100 {
        let mut rng = seed::rng(404, i);
        let px: Vec<f64> = (0..32 * 32).map(|_| f64::from(rng.gen_range(0u8..=255))).collect();
        let img = Thermogram::new(32, 32, px.clone(), Scale::Byte).map_err(|e| e.to_string())?;
        for (lo, hi) in THRESHOLD_GRID {
            let map = amt_threshold(&img, lo, hi).map_err(|e| e.to_string())?;
            for (v, c) in px.iter().zip(map.cells()) {
                let expect = if *v >= hi {
                    Cell::High
                } else if *v < lo {
                    Cell::Low
                } else {
                    Cell::Edge
                };
                mismatches += usize::from(*c != expect);
            }
        }
    }
    let text = format!("{mismatches} mismatches over 100 images x 3 pairs");
    if mismatches == 0 {
        Ok(text)
    } else {
        Err(text)
    }
}

fn closed_forms() -> Outcome {
    let v = |x: &[f64]| thermobreath::autodiff::Tensor::vector(x.to_vec());
    let crl = |e: &[&[f64]], labels: &[usize], sign| {
        let t: Vec<_> = e.iter().map(|x| v(x)).collect();
        crl_loss_value(&t, &mine_pairs(labels), 1.0, sign).map_err(|e| e.to_string())
    };
    let d = 1.7f64;
    let checks = [
        ("identical positives", crl(&[&[0.3, -1.0], &[0.3, -1.0], &[0.3, -1.0]], &[1, 1, 1], CrlSign::Separability)?, 0.0),
        ("negative pair separability", crl(&[&[0.0, 0.0], &[d, 0.0]], &[0, 1], CrlSign::Separability)?, (-d).exp()),
        ("negative pair as-written", crl(&[&[0.0, 0.0], &[d, 0.0]], &[0, 1], CrlSign::AsWritten)?, -(-d).exp()),
        (
            "three embeddings",
            crl(&[&[0.0, 0.0], &[3.0, 4.0], &[0.0, 1.0]], &[0, 0, 1], CrlSign::Separability)?,
            5.0 + (-1.0f64).exp() + (-(18.0f64).sqrt()).exp(),
        ),
    ];
    let mut bad: Vec<String> = checks
        .iter()
        .filter(|(_, got, want)| (got - want).abs() > CLOSED_FORM_TOLERANCE)
        .map(|(n, got, want)| format!("{n}: {got} vs {want}"))
        .collect();
    let half = EnsembleWeights::new(&[0.5, 0.5]).map_err(|e| e.to_string())?;
    let scores = [[0.9, 0.1], [0.2, 0.8]];
    let fused = fuse(&scores, &half).map_err(|e| e.to_string())?;
    if (fused[0] - 0.55).abs() > CLOSED_FORM_TOLERANCE
        || (fused[1] - 0.45).abs() > CLOSED_FORM_TOLERANCE
        || ensemble_predict(&scores, &half).map_err(|e| e.to_string())? != 0
    {
        bad.push(format!("ensemble example fused to {fused:?}"));
    }
    let mut flips = 0;
    for i in 0..1000 {
        let mut rng = seed::rng(505, i);
        let s: Vec<[f64; 2]> = (0..3).map(|_| [rng.gen::<f64>(), rng.gen::<f64>()]).collect();
        let w: Vec<f64> = (0..3).map(|_| rng.gen_range(0.01..5.0)).collect();
        let k = 10f64.powf(rng.gen_range(-3.0..3.0));
        let scaled: Vec<f64> = w.iter().map(|x| x * k).collect();
        let a = ensemble_predict(&s, &EnsembleWeights::new(&w).map_err(|e| e.to_string())?);
        let b = ensemble_predict(&s, &EnsembleWeights::new(&scaled).map_err(|e| e.to_string())?);
        flips += usize::from(a.map_err(|e| e.to_string())? != b.map_err(|e| e.to_string())?);
    }
    if flips > 0 {
        bad.push(format!("{flips} argmax changes under rescaling"));
    }
    if bad.is_empty() {
        Ok("4 contrastive examples, ensemble example, 1000 rescaled score sets".into())
    } else {
        Err(bad.join("; "))
    }
}

fn shared_source(cfg: &RunConfig) -> Result<SourceModel, String> {
    let (source, _) = pretrain_source(
        &cfg.model(),
        cfg.pretrain_per_class,
        cfg.pretrain_epochs,
        cfg.pretrain_learn_rate,
        SOURCE_SEED,
    )
    .map_err(|e| e.to_string())?;
    Ok(source)
}

fn seeded(seed: u64) -> RunConfig {
    RunConfig {
        seed,
        ..RunConfig::default()
    }
}

fn raw_for(cfg: &RunConfig) -> Result<thermobreath::pipeline::Dataset, String> {
    synth_generate(cfg.n_per_class, (cfg.image_size, cfg.image_size), cfg.seed, cfg.include_mid).map_err(|e| e.to_string())
}

fn ablation_runs(source: &SourceModel) -> Result<Vec<Vec<AblationRow>>, String> {
    SEEDS
        .map(|s| {
            let cfg = seeded(s);
            run_ablation(source, &raw_for(&cfg)?, &cfg).map_err(|e| e.to_string())
        })
        .collect()
}

fn headline_accuracy(runs: &[Vec<AblationRow>], pretrain_minutes: f64) -> Outcome {
    let cfg = RunConfig::default();
    let per_class_train = (cfg.n_per_class * cfg.copies) as f64 * cfg.train_fraction;
    let full = ABLATION_TAGS.len() - 1;
    let accs: Vec<f64> = runs.iter().map(|r| r[full].metrics.accuracy).collect();
    let hits = accs.iter().filter(|&&a| a >= TARGET_ACCURACY).count();
    let minutes = pretrain_minutes + runs.iter().map(|r| r[full].wall_time).sum::<f64>() / 60.0;
    let text = format!(
        "{} accuracy {:?} over {} epochs, {hits}/5 >= {TARGET_ACCURACY}, {per_class_train} train per class, {minutes:.1} min",
        ABLATION_TAGS[full],
        accs.iter().map(|a| format!("{a:.3}")).collect::<Vec<_>>(),
        cfg.epochs
    );
    if hits >= 4 && cfg.epochs <= 20 && per_class_train >= 400.0 && minutes <= 15.0 {
        Ok(text)
    } else {
        Err(text)
    }
}

fn ablation_ordering(runs: &[Vec<AblationRow>], minutes: f64) -> Outcome {
    let means: Vec<f64> = (0..ABLATION_TAGS.len())
        .map(|row| runs.iter().map(|r| r[row].metrics.accuracy).sum::<f64>() / runs.len() as f64)
        .collect();
    let monotone = means.windows(2).all(|w| w[1] >= w[0]);
    let margin = means[means.len() - 1] - means[0];
    let text = format!(
        "means {} over {} seeds, gain {margin:.3}, {minutes:.1} min",
        means.iter().map(|m| format!("{m:.3}")).collect::<Vec<_>>().join(" "),
        runs.len()
    );
    if monotone && margin >= ABLATION_MARGIN && minutes <= 45.0 {
        Ok(text)
    } else {
        Err(text)
    }
}

fn stability(source: &SourceModel) -> Outcome {
    let mut wins = 0;
    let mut lines = Vec::new();
    for s in SEEDS {
        let cfg = seeded(s);
        let runs = gradual_ft_suite(source, &raw_for(&cfg)?, &cfg).map_err(|e| e.to_string())?;
        let std_of = |sched: Schedule| -> Result<f64, String> {
            runs.iter()
                .find(|(k, _)| *k == sched)
                .and_then(|(_, o)| o.log.val_loss_std(5, 20))
                .ok_or_else(|| format!("no epochs 5-20 for {}", sched.name()))
        };
        let (mut th, mut raw) = (0.0, 0.0);
        let mut parts = Vec::new();
        let matched: Vec<usize> = runs
            .iter()
            .filter(|(k, _)| k.use_thresholding && runs.iter().any(|(r, _)| !r.use_thresholding && r.top_l == k.top_l))
            .map(|(k, _)| k.top_l)
            .collect();
        for &l in &matched {
            let a = std_of(Schedule { top_l: l, use_thresholding: true })?;
            let b = std_of(Schedule { top_l: l, use_thresholding: false })?;
            parts.push(format!("top{l} {a:.4}/{b:.4}"));
            th += a;
            raw += b;
        }
        let won = th < raw;
        wins += usize::from(won);
        lines.push(format!("seed {s}: {}{}", parts.join(" "), if won { " +" } else { " -" }));
    }
    let text = format!("{wins}/5 seeds lower with thresholding [{}]", lines.join(", "));
    if 2 * wins > SEEDS.count() {
        Ok(text)
    } else {
        Err(text)
    }
}

fn determinism(source: &SourceModel) -> Outcome {
    let cfg = RunConfig::from_toml_str("image_size = 64\nn_per_class = 30\ncopies = 2\nepochs = 3\n").map_err(|e| e.to_string())?;
    let raw = raw_for(&cfg)?;
    let data = prepare(&raw, &cfg, cfg.use_thresholding).map_err(|e| e.to_string())?;
    let probe_raw = synth_generate(50, (cfg.image_size, cfg.image_size), 777, true).map_err(|e| e.to_string())?;
    let probe = expand_dataset(&probe_raw, 1, cfg.use_thresholding, 778).map_err(|e| e.to_string())?;
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let run = |tag: &str| -> Result<(Vec<u8>, Vec<u8>, TrainedModel), String> {
        let (mut model, mut map) = fresh_target(source, &cfg).map_err(|e| e.to_string())?;
        let out = train(&mut model, source, &mut map, (&data.0, &data.1), &TrainConfig::from_run(&cfg), tag)
            .map_err(|e| e.to_string())?;
        let trained = TrainedModel { model, map, classical: out.classical };
        let (ckpt, csv) = (dir.path().join(format!("{tag}.ckpt")), dir.path().join(format!("{tag}.csv")));
        trained.save(&ckpt).map_err(|e| e.to_string())?;
        out.log.write_csv(&csv).map_err(|e| e.to_string())?;
        let read = |p: &Path| fs::read(p).map_err(|e| e.to_string());
        Ok((read(&ckpt)?, read(&csv)?, trained))
    };
    let (ckpt_a, csv_a, model_a) = run("a")?;
    let (ckpt_b, csv_b, _) = run("b")?;
    let restored = TrainedModel::from_checkpoint(&read_checkpoint(&dir.path().join("a.ckpt")).map_err(|e| e.to_string())?)
        .map_err(|e| e.to_string())?;
    let before = model_a.predict(&probe).map_err(|e| e.to_string())?;
    let after = restored.predict(&probe).map_err(|e| e.to_string())?;
    let checks = [
        ("checkpoint bytes", ckpt_a == ckpt_b),
        ("csv bytes", csv_a == csv_b),
        ("restored parameters", restored.model.params() == model_a.model.params() && restored.map == model_a.map),
        ("restored stage bytes", restored.to_checkpoint().to_bytes() == ckpt_a),
        ("probe predictions", before == after && before.len() == 100),
    ];
    let failed: Vec<&str> = checks.iter().filter(|(_, ok)| !ok).map(|(n, _)| *n).collect();
    if failed.is_empty() {
        Ok(format!("{} checkpoint bytes and {} csv bytes identical, 100-sample probe agrees", ckpt_a.len(), csv_a.len()))
    } else {
        Err(format!("mismatch in {}", failed.join(", ")))
    }
}

fn report(n: usize, name: &str, outcome: Outcome, failures: &mut usize) {
    match outcome {
        Ok(text) => println!("criterion {n} PASS {name}: {text}"),
        Err(text) => {
            *failures += 1;
            println!("criterion {n} FAIL {name}: {text}");
        }
    }
}

fn main() {
    let mut failures = 0;
    report(1, "architecture counts", architecture(), &mut failures);
    report(2, "dataset arithmetic", dataset_arithmetic(), &mut failures);
    report(3, "gradient integrity", gradients(), &mut failures);
    report(4, "threshold oracle", threshold_oracle(), &mut failures);
    report(5, "closed forms", closed_forms(), &mut failures);

    let started = Instant::now();
    let source = shared_source(&RunConfig::default());
    let pretrain_minutes = started.elapsed().as_secs_f64() / 60.0;
    match source {
        Ok(source) => {
            let started = Instant::now();
            let runs = ablation_runs(&source);
            let minutes = pretrain_minutes + started.elapsed().as_secs_f64() / 60.0;
            match runs {
                Ok(runs) => {
                    report(6, "full configuration accuracy", headline_accuracy(&runs, pretrain_minutes), &mut failures);
                    report(7, "ablation ordering", ablation_ordering(&runs, minutes), &mut failures);
                }
                Err(e) => {
                    report(6, "full configuration accuracy", Err(e.clone()), &mut failures);
                    report(7, "ablation ordering", Err(e), &mut failures);
                }
            }
            report(8, "fine-tuning stability", stability(&source), &mut failures);
            report(9, "determinism and round trip", determinism(&source), &mut failures);
        }
        Err(e) => {
            for (n, name) in [(6, "full configuration accuracy"), (7, "ablation ordering"), (8, "fine-tuning stability"), (9, "determinism and round trip")] {
                report(n, name, Err(format!("source pretraining failed: {e}")), &mut failures);
            }
        }
    }
    println!("{} of 9 criteria passed", 9 - failures);
    if failures > 0 {
        std::process::exit(1);
    }
}
