//! Command-line front end. Every subcommand accepts `--seed`, `--config` and
//! `--out`; outputs land under `--out` together with `config.echo`.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use thermobreath::config::RunConfig;
use thermobreath::eval::{compute_metrics, emit_report, gradient_suite, run_ablation, GRAD_STEP};
use thermobreath::imaging::{resize, write_pgm, Scale, Thermogram};
use thermobreath::network::SourceModel;
use thermobreath::autodiff::{read_checkpoint, write_checkpoint};
use thermobreath::pipeline::{
    expand_dataset, fresh_target, gradual_ft_suite, ingest, prepare, pretrain_source, resample_balance, synth_generate,
    train, Dataset, Label, Manifest, TrainConfig, TrainedModel,
};

/// Relative error bound for `gradcheck`.
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;

#[derive(Parser, Debug)]
#[command(
    name = "thermobreath",
    version,
    about = "Breathing-phase classification from thermal images",
    arg_required_else_help = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// Root seed; overrides the config file.
    #[arg(long)]
    seed: Option<u64>,
    /// TOML run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args, Debug, Clone)]
struct DataArgs {
    /// Class manifest (`LABEL = directory` lines); synthetic data when absent.
    #[arg(long)]
    manifest: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
struct SourceArgs {
    /// Pretrained source checkpoint; pretrained from scratch when absent.
    #[arg(long)]
    source: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic dataset as PGM files plus a manifest.
    Synth {
        #[command(flatten)]
        common: Common,
        /// Images per class; defaults to `n_per_class` from the config.
        #[arg(long)]
        n: Option<usize>,
    },
    /// Balance and expand a dataset, writing the variants as PGM files.
    Preprocess {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArgs,
    },
    /// Train the target model and write the checkpoint and run log.
    Train {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        source: SourceArgs,
    },
    /// Run every gradual fine-tuning schedule and write one run log each.
    GradualFt {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        source: SourceArgs,
    },
    /// Run the six-row ablation ladder over several seeds.
    Ablate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        source: SourceArgs,
        /// Number of consecutive seeds starting at `--seed`.
        #[arg(long, default_value_t = 5)]
        seeds: u64,
    },
    /// Score a trained checkpoint on a dataset.
    Eval {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArgs,
        /// Checkpoint written by `train`.
        #[arg(long)]
        model: PathBuf,
    },
    /// Finite-difference check of every tape operation and loss.
    Gradcheck {
        #[command(flatten)]
        common: Common,
        /// Number of random seeds starting at `--seed`.
        #[arg(long, default_value_t = 20)]
        seeds: u64,
    },
}

type CliResult<T> = Result<T, String>;

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

/// Parses `argv` (including the program name), runs the command and returns
/// the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(msg) => {
            eprintln!("error: {msg}");
            1
        }
    }
}

fn setup(common: &Common) -> CliResult<RunConfig> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::load(path).map_err(err)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    cfg.validate().map_err(err)?;
    fs::create_dir_all(&common.out).map_err(|e| format!("{}: {e}", common.out.display()))?;
    cfg.echo(&common.out).map_err(err)?;
    Ok(cfg)
}

fn dims(cfg: &RunConfig) -> (usize, usize) {
    cfg.model().image_dims()
}

/// Manifest data resized to the model input, or the configured synthetic set.
fn load_data(cfg: &RunConfig, data: &DataArgs) -> CliResult<Dataset> {
    let (h, w) = dims(cfg);
    match &data.manifest {
        Some(path) => {
            let mut d = ingest(path).map_err(err)?;
            for s in &mut d.samples {
                if (s.image.height(), s.image.width()) != (h, w) {
                    s.image = resize(&s.image, h, w).map_err(err)?;
                }
            }
            Ok(d)
        }
        None => synth_generate(cfg.n_per_class, (h, w), cfg.seed, cfg.include_mid).map_err(err),
    }
}

fn load_source(cfg: &RunConfig, args: &SourceArgs, out: &Path) -> CliResult<SourceModel> {
    if let Some(path) = &args.source {
        let source = SourceModel::from_checkpoint(&read_checkpoint(path).map_err(err)?).map_err(err)?;
        if source.config() != &cfg.model() {
            return Err(format!("{} was built for a different model layout", path.display()));
        }
        return Ok(source);
    }
    let (source, log) =
        pretrain_source(&cfg.model(), cfg.pretrain_per_class, cfg.pretrain_epochs, cfg.pretrain_learn_rate, cfg.seed)
            .map_err(err)?;
    write_checkpoint(&source.to_checkpoint(), &out.join("source.ckpt")).map_err(err)?;
    log.write_csv(&out.join("pretext.csv")).map_err(err)?;
    Ok(source)
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    fs::write(path, text).map_err(|e| format!("{}: {e}", path.display()))
}

/// PGMs under `dir/exh` and `dir/inh` plus `dir/manifest.txt`.
fn write_dataset(d: &Dataset, dir: &Path) -> CliResult<()> {
    let mut counters = [0usize; 2];
    for label in Label::ALL {
        let sub = dir.join(label.name().to_ascii_lowercase());
        fs::create_dir_all(&sub).map_err(|e| format!("{}: {e}", sub.display()))?;
    }
    for s in &d.samples {
        let i = &mut counters[s.label.index()];
        let sub = dir.join(s.label.name().to_ascii_lowercase());
        let image = match s.image.scale() {
            Scale::Byte => s.image.clone(),
            Scale::Unit => to_bytes(&s.image)?,
        };
        write_pgm(&image, &sub.join(format!("{:05}.pgm", *i))).map_err(err)?;
        *i += 1;
    }
    let manifest = Manifest {
        entries: Label::ALL
            .iter()
            .rev()
            .map(|l| (*l, dir.join(l.name().to_ascii_lowercase())))
            .collect(),
    };
    write_text(&dir.join("manifest.txt"), &manifest.to_text(dir))
}

fn to_bytes(t: &Thermogram) -> CliResult<Thermogram> {
    let px = t.pixels().iter().map(|p| (p * 255.0).round().clamp(0.0, 255.0)).collect();
    Thermogram::new(t.height(), t.width(), px, Scale::Byte).map_err(err)
}

fn counts_text(d: &Dataset) -> String {
    let [inh, exh] = d.counts();
    format!("{exh} EXH / {inh} INH")
}

fn dispatch(command: Command) -> CliResult<i32> {
    match command {
        Command::Synth { common, n } => {
            let cfg = setup(&common)?;
            let d = synth_generate(n.unwrap_or(cfg.n_per_class), dims(&cfg), cfg.seed, cfg.include_mid).map_err(err)?;
            write_dataset(&d, &common.out)?;
            println!("wrote {} images ({})", d.len(), counts_text(&d));
        }
        Command::Preprocess { common, data } => {
            let cfg = setup(&common)?;
            let raw = load_data(&cfg, &data)?;
            let balanced = resample_balance(&raw, thermobreath::seed::mix(cfg.seed, 11)).map_err(err)?;
            let expanded = expand_dataset(&balanced, cfg.copies, cfg.use_thresholding, thermobreath::seed::mix(cfg.seed, 12))
                .map_err(err)?;
            write_dataset(&expanded, &common.out)?;
            let text = format!(
                "raw {}\nbalanced {}\nexpanded {}\n",
                counts_text(&raw),
                counts_text(&balanced),
                counts_text(&expanded)
            );
            write_text(&common.out.join("counts.txt"), &text)?;
            print!("{text}");
        }
        Command::Train { common, data, source } => {
            let cfg = setup(&common)?;
            let raw = load_data(&cfg, &data)?;
            let src = load_source(&cfg, &source, &common.out)?;
            let (tr, va) = prepare(&raw, &cfg, cfg.use_thresholding).map_err(err)?;
            let (mut model, mut map) = fresh_target(&src, &cfg).map_err(err)?;
            let out = train(&mut model, &src, &mut map, (&tr, &va), &TrainConfig::from_run(&cfg), "train").map_err(err)?;
            let trained = TrainedModel { model, map, classical: out.classical };
            trained.save(&common.out.join("model.ckpt")).map_err(err)?;
            out.log.write_csv(&common.out.join("runlog.csv")).map_err(err)?;
            let m = out.metrics;
            let text = format!(
                "accuracy {:.4}\nprecision {:.4}\nrecall {:.4}\nf1 {:.4}\nwall_time_s {:.2}\n",
                m.accuracy, m.precision, m.recall, m.f1, out.log.wall_time
            );
            write_text(&common.out.join("metrics.txt"), &text)?;
            print!("{text}");
        }
        Command::GradualFt { common, data, source } => {
            let cfg = setup(&common)?;
            let raw = load_data(&cfg, &data)?;
            let src = load_source(&cfg, &source, &common.out)?;
            let runs = gradual_ft_suite(&src, &raw, &cfg).map_err(err)?;
            let mut summary = String::from("schedule,accuracy,val_loss_std_5_20\n");
            for (sched, out) in &runs {
                out.log.write_csv(&common.out.join(format!("{}.csv", sched.name()))).map_err(err)?;
                let std = out.log.val_loss_std(5, 20).map_or("NA".to_string(), |s| format!("{s:.6}"));
                writeln!(summary, "{},{:.6},{std}", sched.name(), out.metrics.accuracy).map_err(err)?;
            }
            write_text(&common.out.join("schedules.csv"), &summary)?;
            print!("{summary}");
        }
        Command::Ablate { common, source, seeds } => {
            let cfg = setup(&common)?;
            let src = load_source(&cfg, &source, &common.out)?;
            let mut rows = Vec::new();
            for s in cfg.seed..cfg.seed + seeds.max(1) {
                let run = RunConfig { seed: s, ..cfg.clone() };
                let raw = synth_generate(run.n_per_class, dims(&run), s, run.include_mid).map_err(err)?;
                rows.extend(run_ablation(&src, &raw, &run).map_err(err)?);
            }
            emit_report(&rows, &common.out).map_err(err)?;
            let summary = fs::read_to_string(common.out.join("summary.txt")).map_err(err)?;
            print!("{summary}");
        }
        Command::Eval { common, data, model } => {
            let cfg = setup(&common)?;
            let trained = TrainedModel::load(&model).map_err(err)?;
            let raw = load_data(&cfg, &data)?;
            let view = expand_dataset(&raw, 1, cfg.use_thresholding, thermobreath::seed::mix(cfg.seed, 12)).map_err(err)?;
            let preds = trained.predict(&view).map_err(err)?;
            let m = compute_metrics(&preds, &view.labels()).map_err(err)?;
            let mut csv = String::from("index,origin,label,predicted\n");
            for (i, (s, p)) in view.samples.iter().zip(&preds).enumerate() {
                writeln!(csv, "{i},{},{},{}", s.origin, s.label, label_name(*p)).map_err(err)?;
            }
            write_text(&common.out.join("predictions.csv"), &csv)?;
            let text = format!(
                "samples {}\naccuracy {:.4}\nprecision {:.4}\nrecall {:.4}\nf1 {:.4}\nconfusion [[{}, {}], [{}, {}]]\n",
                view.len(),
                m.accuracy,
                m.precision,
                m.recall,
                m.f1,
                m.confusion[0][0],
                m.confusion[0][1],
                m.confusion[1][0],
                m.confusion[1][1]
            );
            write_text(&common.out.join("metrics.txt"), &text)?;
            print!("{text}");
        }
        Command::Gradcheck { common, seeds } => {
            let cfg = setup(&common)?;
            let cases = gradient_suite(cfg.seed..cfg.seed + seeds.max(1)).map_err(err)?;
            let mut csv = String::from("function,seed,relative_error\n");
            for c in &cases {
                writeln!(csv, "{},{},{:e}", c.name, c.seed, c.error).map_err(err)?;
            }
            write_text(&common.out.join("gradcheck.csv"), &csv)?;
            let worst = cases.iter().map(|c| c.error).fold(0.0, f64::max);
            println!("checked {} cases with step {GRAD_STEP:e}; max relative error {worst:.3e}", cases.len());
            return Ok(if worst < GRADCHECK_TOLERANCE { 0 } else { 1 });
        }
    }
    Ok(0)
}

fn label_name(i: usize) -> &'static str {
    Label::from_index(i).map_or("?", Label::name)
}
