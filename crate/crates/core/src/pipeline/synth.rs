//! Synthetic nostril-region thermograms.
//!
//! Each image is a cool noisy background with a smooth illumination slope, a
//! warm elliptical face with two nostrils at its lower edge, and a breath
//! plume below the nose. Nostril and plume temperatures are absolute: they
//! blend the underlying pixels toward a target intensity, so the phase is
//! encoded in absolute levels rather than in contrast to the background.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::data::{Dataset, LabeledSample, Label, PhaseTag};
use crate::error::{Error, Result};
use crate::imaging::{Scale, Thermogram};
use crate::seed;

/// Breathing phase drawn by the generator.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Phase {
    ExhFull,
    ExhMid,
    InhMid,
    InhFull,
}

impl Phase {
    pub fn label(self) -> Label {
        match self {
            Phase::ExhFull | Phase::ExhMid => Label::Exh,
            Phase::InhMid | Phase::InhFull => Label::Inh,
        }
    }

    pub fn tag(self) -> PhaseTag {
        match self {
            Phase::ExhFull | Phase::InhFull => PhaseTag::Full,
            Phase::ExhMid | Phase::InhMid => PhaseTag::Mid,
        }
    }

    /// Plume temperature as a fraction of [`SynthStyle::plume_peak`].
    fn amplitude(self, rng: &mut impl Rng) -> f64 {
        match self {
            Phase::ExhFull => rng.gen_range(0.85..=1.0),
            Phase::ExhMid => rng.gen_range(0.63..=0.7),
            Phase::InhMid => rng.gen_range(0.47..=0.54),
            Phase::InhFull => rng.gen_range(0.0..=0.1),
        }
    }
}

/// Intensity constants of the generator, on the 8-bit scale.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SynthStyle {
    pub background: (f64, f64),
    pub slope: f64,
    pub face: (f64, f64),
    /// Nostril temperature while exhaling and while inhaling.
    pub nostril_exh: (f64, f64),
    pub nostril_inh: (f64, f64),
    /// Plume temperature of a full exhalation.
    pub plume_peak: f64,
    pub noise_std: f64,
}

impl Default for SynthStyle {
    fn default() -> Self {
        SynthStyle {
            background: (0.0, 35.0),
            slope: 8.0,
            face: (70.0, 130.0),
            nostril_exh: (57.0, 70.0),
            nostril_inh: (30.0, 43.0),
            plume_peak: 255.0,
            noise_std: 6.0,
        }
    }
}

/// Nominal plume centre as fractions of `(height, width)`.
pub const PLUME_CENTER: (f64, f64) = (0.76, 0.5);

fn gauss(dy: f64, dx: f64, sy: f64, sx: f64) -> f64 {
    (-0.5 * ((dy / sy).powi(2) + (dx / sx).powi(2))).exp()
}

/// Renders a face with the plume centred at `plume` (fractions of height and
/// width) at temperature `amplitude · plume_peak`, and nostrils at `nostril`.
fn render(
    (h, w): (usize, usize),
    style: &SynthStyle,
    amplitude: f64,
    nostril: f64,
    plume: (f64, f64),
    rng: &mut impl Rng,
) -> Result<Thermogram> {
    let (hf, wf) = (h as f64, w as f64);
    let bg = rng.gen_range(style.background.0..=style.background.1);
    let (gy, gx) = (rng.gen_range(-style.slope..=style.slope), rng.gen_range(-style.slope..=style.slope));
    let face_t = rng.gen_range(style.face.0..=style.face.1);
    let (fcy, fcx) = (
        (0.36 + rng.gen_range(-0.03..=0.03)) * hf,
        (0.5 + rng.gen_range(-0.05..=0.05)) * wf,
    );
    let (fry, frx) = (0.28 * hf * rng.gen_range(0.9..=1.1), 0.25 * wf * rng.gen_range(0.9..=1.1));
    let ny = fcy + 0.78 * fry;
    let nostrils = [fcx - 0.09 * wf, fcx + 0.09 * wf];
    let (pcy, pcx) = (
        (plume.0 + rng.gen_range(-0.03..=0.03)) * hf,
        (plume.1 + rng.gen_range(-0.04..=0.04)) * wf,
    );
    let (psy, psx) = (0.07 * hf * rng.gen_range(0.85..=1.15), 0.1 * wf * rng.gen_range(0.85..=1.15));
    let plume_t = amplitude * style.plume_peak;
    let noise = Normal::new(0.0, style.noise_std).map_err(|e| Error::arg(e.to_string()))?;
    let mut px = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            let (yf, xf) = (y as f64 + 0.5, x as f64 + 0.5);
            let mut v = bg + gy * (yf / hf - 0.5) + gx * (xf / wf - 0.5);
            let r = ((yf - fcy) / fry).powi(2) + ((xf - fcx) / frx).powi(2);
            // Soft face edge over the outer tenth of the radius.
            let inside = ((1.0 - r.sqrt()) / 0.1).clamp(0.0, 1.0);
            v += inside * (face_t - v);
            let n = nostrils
                .iter()
                .map(|&nx| gauss(yf - ny, xf - nx, 0.045 * hf, 0.055 * wf))
                .fold(0.0, f64::max);
            v += n * (nostril - v);
            v += gauss(yf - pcy, xf - pcx, psy, psx) * (plume_t - v);
            v += noise.sample(rng);
            px.push(v.clamp(0.0, 255.0).round());
        }
    }
    Thermogram::new(h, w, px, Scale::Byte)
}

/// One synthetic thermogram of the given phase.
pub fn synth_image(phase: Phase, dims: (usize, usize), style: &SynthStyle, rng: &mut impl Rng) -> Result<Thermogram> {
    let a = phase.amplitude(rng);
    let (lo, hi) = match phase.label() {
        Label::Exh => style.nostril_exh,
        Label::Inh => style.nostril_inh,
    };
    let nostril = rng.gen_range(lo..=hi);
    render(dims, style, a, nostril, PLUME_CENTER, rng)
}

/// `n_per_class` images per class. With `include_mid`, odd-numbered samples of
/// each class are mid-phase hard cases labelled with their parent class.
pub fn synth_generate(n_per_class: usize, dims: (usize, usize), seed: u64, include_mid: bool) -> Result<Dataset> {
    synth_generate_styled(n_per_class, dims, seed, include_mid, &SynthStyle::default())
}

pub fn synth_generate_styled(
    n_per_class: usize,
    dims: (usize, usize),
    seed: u64,
    include_mid: bool,
    style: &SynthStyle,
) -> Result<Dataset> {
    if n_per_class == 0 {
        return Err(Error::arg("n_per_class must be at least 1"));
    }
    let mut samples = Vec::with_capacity(2 * n_per_class);
    for label in Label::ALL {
        for i in 0..n_per_class {
            let mid = include_mid && i % 2 == 1;
            let phase = match (label, mid) {
                (Label::Exh, false) => Phase::ExhFull,
                (Label::Exh, true) => Phase::ExhMid,
                (Label::Inh, true) => Phase::InhMid,
                (Label::Inh, false) => Phase::InhFull,
            };
            let mut rng = seed::rng(seed::mix(seed, label.index() as u64), i as u64);
            samples.push(LabeledSample {
                image: synth_image(phase, dims, style, &mut rng)?,
                label,
                phase: Some(phase.tag()),
                origin: format!("synth-{seed}-{label}-{i:05}"),
            });
        }
    }
    Ok(Dataset::new(samples))
}

/// Plume centres of the four-way pretext task.
pub const PRETEXT_CENTERS: [(f64, f64); 4] = [(0.3, 0.3), (0.3, 0.7), (0.76, 0.3), (0.76, 0.7)];

/// Pretext images labelled by which of [`PRETEXT_CENTERS`] holds the plume.
pub fn pretext_generate(n_per_class: usize, dims: (usize, usize), seed: u64) -> Result<Vec<(Thermogram, usize)>> {
    let style = SynthStyle::default();
    let mut out = Vec::with_capacity(4 * n_per_class);
    for i in 0..n_per_class {
        for (c, &center) in PRETEXT_CENTERS.iter().enumerate() {
            let mut rng = seed::rng(seed::mix(seed, 100 + c as u64), i as u64);
            let a = rng.gen_range(0.4..=1.0);
            let nostril = rng.gen_range(style.nostril_inh.0..=style.nostril_exh.1);
            out.push((render(dims, &style, a, nostril, center, &mut rng)?, c));
        }
    }
    Ok(out)
}
