use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::imaging::{self, normalize, Expander, Thermogram};
use crate::seed;

/// Breathing phase class; the discriminant is the class index.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Label {
    Inh = 0,
    Exh = 1,
}

impl Label {
    pub const ALL: [Label; 2] = [Label::Inh, Label::Exh];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Result<Self> {
        match i {
            0 => Ok(Label::Inh),
            1 => Ok(Label::Exh),
            _ => Err(Error::arg(format!("class index {i} is not 0 (INH) or 1 (EXH)"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Label::Inh => "INH",
            Label::Exh => "EXH",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "INH" => Ok(Label::Inh),
            "EXH" => Ok(Label::Exh),
            other => Err(Error::arg(format!("unknown class label {other:?}; expected INH or EXH"))),
        }
    }
}

/// Whether a synthetic sample shows a full or an intermediate phase.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum PhaseTag {
    Full,
    Mid,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledSample {
    pub image: Thermogram,
    pub label: Label,
    pub phase: Option<PhaseTag>,
    /// Source file path or synthetic id; shared by every variant of one image.
    pub origin: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BalanceState {
    Raw,
    Balanced,
    Expanded,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub samples: Vec<LabeledSample>,
    pub manifest_path: Option<PathBuf>,
    pub balance_state: BalanceState,
}

impl Dataset {
    pub fn new(samples: Vec<LabeledSample>) -> Self {
        Dataset {
            samples,
            manifest_path: None,
            balance_state: BalanceState::Raw,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// `[INH, EXH]` sample counts.
    pub fn counts(&self) -> [usize; 2] {
        let mut c = [0; 2];
        for s in &self.samples {
            c[s.label.index()] += 1;
        }
        c
    }

    pub fn origins(&self) -> BTreeSet<&str> {
        self.samples.iter().map(|s| s.origin.as_str()).collect()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.label.index()).collect()
    }
}

/// Class-to-directory mapping. One `LABEL = directory` entry per line; `#`
/// starts a comment; relative directories resolve against the manifest's
/// own directory.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Manifest {
    pub entries: Vec<(Label, PathBuf)>,
}

impl Manifest {
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let mut entries = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (label, dir) = line
                .split_once('=')
                .ok_or_else(|| Error::Format(format!("manifest line {}: expected LABEL = directory", n + 1)))?;
            let label: Label = label.parse()?;
            let dir = PathBuf::from(dir.trim().trim_matches('"'));
            entries.push((label, if dir.is_absolute() { dir } else { base.join(dir) }));
        }
        if entries.is_empty() {
            return Err(Error::Format("manifest lists no class directories".into()));
        }
        Ok(Manifest { entries })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Manifest::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn to_text(&self, base: &Path) -> String {
        self.entries
            .iter()
            .map(|(l, d)| {
                let shown = d.strip_prefix(base).unwrap_or(d);
                format!("{l} = {}\n", shown.display())
            })
            .collect()
    }
}

fn is_image(path: &Path) -> bool {
    matches!(
        path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref(),
        Some("pgm" | "png")
    )
}

/// Loads every PGM/PNG under each manifest directory, in file-name order.
/// Colour images are converted to grayscale.
pub fn ingest(manifest_path: &Path) -> Result<Dataset> {
    let manifest = Manifest::load(manifest_path)?;
    let mut samples = Vec::new();
    for (label, dir) in &manifest.entries {
        let mut files: Vec<PathBuf> = fs::read_dir(dir)
            .map_err(|e| Error::io(dir, e))?
            .map(|e| e.map(|e| e.path()).map_err(|err| Error::io(dir, err)))
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .filter(|p| is_image(p))
            .collect();
        files.sort();
        if files.is_empty() {
            return Err(Error::Format(format!("class {label} directory {} holds no images", dir.display())));
        }
        for f in files {
            samples.push(LabeledSample {
                image: imaging::read_image(&f)?,
                label: *label,
                phase: None,
                origin: f.display().to_string(),
            });
        }
    }
    Ok(Dataset {
        samples,
        manifest_path: Some(manifest_path.to_path_buf()),
        balance_state: BalanceState::Raw,
    })
}

/// Upsamples the minority class with replacement to the majority count.
pub fn resample_balance(d: &Dataset, seed: u64) -> Result<Dataset> {
    let counts = d.counts();
    if counts.contains(&0) {
        return Err(Error::arg(format!(
            "balancing needs both classes, got {} INH and {} EXH",
            counts[0], counts[1]
        )));
    }
    let mut out = d.clone();
    out.balance_state = BalanceState::Balanced;
    if counts[0] == counts[1] {
        return Ok(out);
    }
    let minority = if counts[0] < counts[1] { Label::Inh } else { Label::Exh };
    let pool: Vec<&LabeledSample> = d.samples.iter().filter(|s| s.label == minority).collect();
    let mut rng = seed::rng(seed, 0);
    for _ in 0..counts[0].abs_diff(counts[1]) {
        out.samples.push(pool[rng.gen_range(0..pool.len())].clone());
    }
    Ok(out)
}

/// Replaces every sample by `k` preprocessed variants, normalized to `[0, 1]`.
/// Sample `i` draws from the stream keyed by `(seed, i)`.
pub fn expand_dataset(d: &Dataset, k: usize, use_thresholding: bool, seed: u64) -> Result<Dataset> {
    let expander = Expander {
        copies: k,
        thresholding: use_thresholding,
        ..Expander::default()
    };
    let mut samples = Vec::with_capacity(d.len() * k);
    for (i, s) in d.samples.iter().enumerate() {
        for image in expander.expand(&s.image, seed::mix(seed, i as u64))? {
            samples.push(LabeledSample {
                image: normalize(&image),
                label: s.label,
                phase: s.phase,
                origin: s.origin.clone(),
            });
        }
    }
    Ok(Dataset {
        samples,
        manifest_path: d.manifest_path.clone(),
        balance_state: BalanceState::Expanded,
    })
}

/// Origin-stratified split: within each class, origins are shuffled and the
/// first `round(fraction · origins)` go to training with all their variants.
pub fn split(d: &Dataset, train_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::arg(format!("train fraction {train_fraction} outside (0, 1)")));
    }
    let mut train_origins = BTreeSet::new();
    for label in Label::ALL {
        let mut origins: Vec<&str> = d
            .samples
            .iter()
            .filter(|s| s.label == label)
            .map(|s| s.origin.as_str())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        origins.shuffle(&mut seed::rng(seed, label.index() as u64));
        let n_train = (train_fraction * origins.len() as f64).round() as usize;
        if n_train == 0 || n_train == origins.len() {
            return Err(Error::arg(format!(
                "train fraction {train_fraction} leaves one side empty for {} {label} origins",
                origins.len()
            )));
        }
        train_origins.extend(origins[..n_train].iter().map(|o| o.to_string()));
    }
    let (train, val): (Vec<_>, Vec<_>) = d
        .samples
        .iter()
        .cloned()
        .partition(|s| train_origins.contains(&s.origin));
    let wrap = |samples| Dataset {
        samples,
        manifest_path: d.manifest_path.clone(),
        balance_state: d.balance_state,
    };
    Ok((wrap(train), wrap(val)))
}
