//! Thermogram preprocessing: grayscale, resize, tri-level thresholding,
//! augmentation and normalization.
//!
//! All functions are pure; they take images by reference and return new ones.

mod io;

pub use io::{read_image, read_pgm, read_png, write_pgm, write_trimap_pgm};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

/// Value range a [`Thermogram`]'s pixels live in.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Scale {
    /// Integral intensities in `[0, 255]`.
    Byte,
    /// Real intensities in `[0, 1]`.
    Unit,
}

impl Scale {
    pub fn max(self) -> f64 {
        match self {
            Scale::Byte => 255.0,
            Scale::Unit => 1.0,
        }
    }
}

/// Single-channel intensity raster, stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Thermogram {
    height: usize,
    width: usize,
    pixels: Vec<f64>,
    scale: Scale,
}

impl Thermogram {
    pub fn new(height: usize, width: usize, pixels: Vec<f64>, scale: Scale) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::shape(format!("thermogram dims {height}x{width} must be non-zero")));
        }
        if pixels.len() != height * width {
            return Err(Error::shape(format!(
                "{} pixels for a {height}x{width} thermogram",
                pixels.len()
            )));
        }
        let max = scale.max();
        if let Some(p) = pixels.iter().find(|p| !(0.0..=max).contains(*p)) {
            return Err(Error::arg(format!("pixel {p} outside [0, {max}]")));
        }
        if scale == Scale::Byte {
            if let Some(p) = pixels.iter().find(|p| p.fract() != 0.0) {
                return Err(Error::arg(format!("8-bit pixel {p} is not integral")));
            }
        }
        Ok(Thermogram {
            height,
            width,
            pixels,
            scale,
        })
    }

    pub fn from_bytes(height: usize, width: usize, bytes: &[u8]) -> Result<Self> {
        Thermogram::new(height, width, bytes.iter().map(|&b| f64::from(b)).collect(), Scale::Byte)
    }

    pub fn filled(height: usize, width: usize, value: f64, scale: Scale) -> Result<Self> {
        Thermogram::new(height, width, vec![value; height * width], scale)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn scale(&self) -> Scale {
        self.scale
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn get(&self, y: usize, x: usize) -> f64 {
        self.pixels[y * self.width + x]
    }

    /// Pixels as 8-bit values, rescaling unit images.
    pub fn to_bytes(&self) -> Vec<u8> {
        let factor = 255.0 / self.scale.max();
        self.pixels
            .iter()
            .map(|p| round_half_up(p * factor).clamp(0.0, 255.0) as u8)
            .collect()
    }

    // Pixels computed by resampling; quantized back onto the declared scale.
    fn from_raw(height: usize, width: usize, mut pixels: Vec<f64>, scale: Scale) -> Self {
        let max = scale.max();
        for p in &mut pixels {
            *p = p.clamp(0.0, max);
            if scale == Scale::Byte {
                *p = round_half_up(*p);
            }
        }
        Thermogram {
            height,
            width,
            pixels,
            scale,
        }
    }

    /// Bilinear sample at a real-valued position; `None` outside the frame.
    fn sample(&self, y: f64, x: f64) -> Option<f64> {
        const SLACK: f64 = 1e-9;
        let (hmax, wmax) = ((self.height - 1) as f64, (self.width - 1) as f64);
        if y < -SLACK || x < -SLACK || y > hmax + SLACK || x > wmax + SLACK {
            return None;
        }
        let (y, x) = (y.clamp(0.0, hmax), x.clamp(0.0, wmax));
        let (y0, x0) = (y.floor() as usize, x.floor() as usize);
        let (y1, x1) = ((y0 + 1).min(self.height - 1), (x0 + 1).min(self.width - 1));
        let (ty, tx) = (y - y0 as f64, x - x0 as f64);
        let top = self.get(y0, x0) * (1.0 - tx) + self.get(y0, x1) * tx;
        let bottom = self.get(y1, x0) * (1.0 - tx) + self.get(y1, x1) * tx;
        Some(top * (1.0 - ty) + bottom * ty)
    }
}

pub(crate) fn round_half_up(v: f64) -> f64 {
    (v + 0.5).floor()
}

/// One 8-bit color channel.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Plane {
    pub height: usize,
    pub width: usize,
    pub values: Vec<u8>,
}

/// Luma conversion with 0.299/0.587/0.114 weights, rounded half-up.
pub fn to_grayscale(red: &Plane, green: &Plane, blue: &Plane) -> Result<Thermogram> {
    for (name, p) in [("green", green), ("blue", blue)] {
        if (p.height, p.width) != (red.height, red.width) {
            return Err(Error::shape(format!(
                "{name} channel is {}x{}, red is {}x{}",
                p.height, p.width, red.height, red.width
            )));
        }
    }
    for (name, p) in [("red", red), ("green", green), ("blue", blue)] {
        if p.values.len() != p.height * p.width {
            return Err(Error::shape(format!("{name} channel has {} values", p.values.len())));
        }
    }
    // Integer weights in thousandths keep the rounding exact.
    let pixels = red
        .values
        .iter()
        .zip(&green.values)
        .zip(&blue.values)
        .map(|((&r, &g), &b)| {
            let weighted = 299 * u32::from(r) + 587 * u32::from(g) + 114 * u32::from(b);
            f64::from((weighted + 500) / 1000)
        })
        .collect();
    Thermogram::new(red.height, red.width, pixels, Scale::Byte)
}

/// Bilinear resize with corner-aligned sampling.
pub fn resize(t: &Thermogram, out_h: usize, out_w: usize) -> Result<Thermogram> {
    if out_h == 0 || out_w == 0 {
        return Err(Error::arg(format!("resize target {out_h}x{out_w} has a zero dimension")));
    }
    if (out_h, out_w) == (t.height, t.width) {
        return Ok(t.clone());
    }
    let ratio = |src: usize, dst: usize| {
        if dst > 1 {
            (src - 1) as f64 / (dst - 1) as f64
        } else {
            0.0
        }
    };
    let (ry, rx) = (ratio(t.height, out_h), ratio(t.width, out_w));
    let mut pixels = Vec::with_capacity(out_h * out_w);
    for y in 0..out_h {
        for x in 0..out_w {
            pixels.push(t.sample(y as f64 * ry, x as f64 * rx).unwrap_or(0.0));
        }
    }
    Ok(Thermogram::from_raw(out_h, out_w, pixels, t.scale))
}

/// Class of one thresholded pixel.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Cell {
    Low,
    Edge,
    High,
}

impl Cell {
    pub fn classify(value: f64, f_low: f64, f_high: f64) -> Cell {
        if value >= f_high {
            Cell::High
        } else if value < f_low {
            Cell::Low
        } else {
            Cell::Edge
        }
    }
}

/// Tri-level thresholded raster.
#[derive(Clone, Debug, PartialEq)]
pub struct TriMap {
    height: usize,
    width: usize,
    cells: Vec<Cell>,
    f_low: f64,
    f_high: f64,
}

impl TriMap {
    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn cells(&self) -> &[Cell] {
        &self.cells
    }

    pub fn thresholds(&self) -> (f64, f64) {
        (self.f_low, self.f_high)
    }

    pub fn from_cells(height: usize, width: usize, cells: Vec<Cell>, f_low: f64, f_high: f64) -> Result<Self> {
        if cells.len() != height * width || height == 0 || width == 0 {
            return Err(Error::shape(format!("{} cells for a {height}x{width} map", cells.len())));
        }
        if f_low >= f_high {
            return Err(Error::arg(format!("f_low {f_low} must be below f_high {f_high}")));
        }
        Ok(TriMap {
            height,
            width,
            cells,
            f_low,
            f_high,
        })
    }
}

/// Tri-level thresholding: `>= f_high` is High, `< f_low` is Low, the rest Edge.
pub fn amt_threshold(t: &Thermogram, f_low: f64, f_high: f64) -> Result<TriMap> {
    if f_low >= f_high {
        return Err(Error::arg(format!("f_low {f_low} must be below f_high {f_high}")));
    }
    let max = t.scale.max();
    if !(0.0..=max).contains(&f_low) || !(0.0..=max).contains(&f_high) {
        return Err(Error::arg(format!(
            "thresholds ({f_low}, {f_high}) outside the image range [0, {max}]"
        )));
    }
    let cells = t.pixels.iter().map(|&p| Cell::classify(p, f_low, f_high)).collect();
    Ok(TriMap {
        height: t.height,
        width: t.width,
        cells,
        f_low,
        f_high,
    })
}

/// Intensity used for Edge cells when a map is rendered.
pub const EDGE_LEVEL: u8 = 128;

/// Renders Low/Edge/High as 0/128/255.
pub fn trimap_to_thermogram(m: &TriMap) -> Thermogram {
    let pixels = m
        .cells
        .iter()
        .map(|c| match c {
            Cell::Low => 0.0,
            Cell::Edge => f64::from(EDGE_LEVEL),
            Cell::High => 255.0,
        })
        .collect();
    Thermogram {
        height: m.height,
        width: m.width,
        pixels,
        scale: Scale::Byte,
    }
}

/// Threshold pairs on the 8-bit scale, cycled across augmented copies.
pub const THRESHOLD_GRID: [(f64, f64); 3] = [(50.0, 150.0), (50.0, 250.0), (150.0, 250.0)];

/// Default number of augmented copies per image.
pub const DEFAULT_COPIES: usize = 5;

/// One geometric + photometric transform.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentSpec {
    /// Degrees, counter-clockwise as displayed.
    pub rotation: f64,
    /// Central zoom factor; above 1 magnifies.
    pub scale: f64,
    /// Offset in the image's own range (0..255 or 0..1).
    pub brightness_delta: f64,
}

impl AugmentSpec {
    pub const IDENTITY: AugmentSpec = AugmentSpec {
        rotation: 0.0,
        scale: 1.0,
        brightness_delta: 0.0,
    };

    pub fn validate(&self) -> Result<()> {
        if !self.scale.is_finite() || self.scale <= 0.0 {
            return Err(Error::arg(format!("augment scale {} must be positive", self.scale)));
        }
        if !self.rotation.is_finite() || !self.brightness_delta.is_finite() {
            return Err(Error::arg("augment parameters must be finite"));
        }
        Ok(())
    }
}

/// Rotation about the center, then central scaling, then a clamped brightness offset.
///
/// Geometric steps resample bilinearly and fill out-of-frame pixels with 0.
pub fn augment(t: &Thermogram, spec: &AugmentSpec) -> Result<Thermogram> {
    spec.validate()?;
    let (h, w) = (t.height, t.width);
    let (cy, cx) = ((h - 1) as f64 / 2.0, (w - 1) as f64 / 2.0);
    let mut current = t.clone();

    if spec.rotation != 0.0 {
        let theta = spec.rotation.to_radians();
        let (sin, cos) = theta.sin_cos();
        // y grows downward, so a counter-clockwise turn on screen maps an
        // output offset (dx, dy) back to (cos*dx - sin*dy, sin*dx + cos*dy).
        let pixels = resample(h, w, |y, x| {
            let (dy, dx) = (y - cy, x - cx);
            current.sample(cy + sin * dx + cos * dy, cx + cos * dx - sin * dy)
        });
        current = Thermogram::from_raw(h, w, pixels, t.scale);
    }
    if spec.scale != 1.0 {
        let inv = 1.0 / spec.scale;
        let pixels = resample(h, w, |y, x| current.sample(cy + (y - cy) * inv, cx + (x - cx) * inv));
        current = Thermogram::from_raw(h, w, pixels, t.scale);
    }
    if spec.brightness_delta != 0.0 {
        let pixels = current.pixels.iter().map(|p| p + spec.brightness_delta).collect();
        current = Thermogram::from_raw(h, w, pixels, t.scale);
    }
    Ok(current)
}

fn resample(h: usize, w: usize, mut at: impl FnMut(f64, f64) -> Option<f64>) -> Vec<f64> {
    let mut out = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            out.push(at(y as f64, x as f64).unwrap_or(0.0));
        }
    }
    out
}

/// Ranges random augmentations are drawn from. Brightness is a fraction of
/// the image's full range.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentRanges {
    pub max_rotation: f64,
    pub min_scale: f64,
    pub max_scale: f64,
    pub max_brightness: f64,
}

impl Default for AugmentRanges {
    fn default() -> Self {
        AugmentRanges {
            max_rotation: 10.0,
            min_scale: 0.9,
            max_scale: 1.1,
            max_brightness: 0.1,
        }
    }
}

impl AugmentRanges {
    pub fn draw(&self, rng: &mut impl Rng, scale: Scale) -> AugmentSpec {
        let uniform = |rng: &mut dyn rand::RngCore, lo: f64, hi: f64| {
            if hi > lo {
                rng.gen_range(lo..=hi)
            } else {
                lo
            }
        };
        AugmentSpec {
            rotation: uniform(rng, -self.max_rotation, self.max_rotation),
            scale: uniform(rng, self.min_scale, self.max_scale),
            brightness_delta: uniform(rng, -self.max_brightness, self.max_brightness) * scale.max(),
        }
    }
}

/// Fan-out of one image into `copies` thresholded and augmented variants.
#[derive(Clone, Debug, PartialEq)]
pub struct Expander {
    pub copies: usize,
    pub ranges: AugmentRanges,
    pub thresholding: bool,
    pub grid: Vec<(f64, f64)>,
}

impl Default for Expander {
    fn default() -> Self {
        Expander {
            copies: DEFAULT_COPIES,
            ranges: AugmentRanges::default(),
            thresholding: true,
            grid: THRESHOLD_GRID.to_vec(),
        }
    }
}

impl Expander {
    /// Copy `j` thresholds with grid pair `j mod grid.len()` (when enabled),
    /// then applies a transform drawn from a stream keyed by `(seed, j)`.
    pub fn expand(&self, t: &Thermogram, seed: u64) -> Result<Vec<Thermogram>> {
        if self.copies == 0 {
            return Err(Error::arg("expansion needs at least one copy"));
        }
        if self.thresholding && self.grid.is_empty() {
            return Err(Error::arg("thresholding enabled with an empty threshold grid"));
        }
        (0..self.copies)
            .map(|j| {
                let base = if self.thresholding {
                    let (lo, hi) = self.grid[j % self.grid.len()];
                    let factor = t.scale.max() / 255.0;
                    trimap_to_thermogram(&amt_threshold(t, lo * factor, hi * factor)?)
                } else {
                    t.clone()
                };
                let spec = self.ranges.draw(&mut seed::rng(seed, j as u64), base.scale);
                augment(&base, &spec)
            })
            .collect()
    }
}

/// `k` thresholded, augmented copies with default ranges and grid.
pub fn expand(t: &Thermogram, k: usize, seed: u64) -> Result<Vec<Thermogram>> {
    Expander {
        copies: k,
        ..Expander::default()
    }
    .expand(t, seed)
}

/// Divides 8-bit pixels by 255. Unit-scale input is returned unchanged.
pub fn normalize(t: &Thermogram) -> Thermogram {
    match t.scale {
        Scale::Unit => t.clone(),
        Scale::Byte => Thermogram {
            height: t.height,
            width: t.width,
            pixels: t.pixels.iter().map(|p| p / 255.0).collect(),
            scale: Scale::Unit,
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn bytes(h: usize, w: usize, v: &[u8]) -> Thermogram {
        Thermogram::from_bytes(h, w, v).unwrap()
    }

    fn plane(values: Vec<u8>, h: usize, w: usize) -> Plane {
        Plane {
            height: h,
            width: w,
            values,
        }
    }

    #[test]
    fn grayscale_examples() {
        let g = to_grayscale(&plane(vec![7], 1, 1), &plane(vec![7], 1, 1), &plane(vec![7], 1, 1)).unwrap();
        assert_eq!(g.pixels(), &[7.0]);

        let r = plane(vec![255, 0, 0, 255], 2, 2);
        let gr = plane(vec![0, 255, 0, 255], 2, 2);
        let b = plane(vec![0, 0, 255, 255], 2, 2);
        let g = to_grayscale(&r, &gr, &b).unwrap();
        // 0.299*255 = 76.245, 0.587*255 = 149.685, 0.114*255 = 29.07
        assert_eq!(g.pixels(), &[76.0, 150.0, 29.0, 255.0]);
    }

    #[test]
    fn grayscale_rejects_mismatched_channels() {
        let err = to_grayscale(&plane(vec![0; 4], 2, 2), &plane(vec![0; 2], 1, 2), &plane(vec![0; 4], 2, 2));
        assert!(matches!(err, Err(Error::Shape(_))));
    }

    #[test]
    fn resize_cases() {
        let t = bytes(2, 2, &[1, 2, 3, 4]);
        assert_eq!(resize(&t, 2, 2).unwrap(), t);
        let col = bytes(2, 1, &[0, 255]);
        assert_eq!(resize(&col, 3, 1).unwrap().pixels(), &[0.0, 128.0, 255.0]);
        assert!(matches!(resize(&t, 0, 3), Err(Error::Argument(_))));
    }

    #[test]
    fn threshold_cases() {
        let t = bytes(1, 3, &[200, 40, 100]);
        let m = amt_threshold(&t, 50.0, 150.0).unwrap();
        assert_eq!(m.cells(), &[Cell::High, Cell::Low, Cell::Edge]);
        // boundaries: f_high is inclusive for High, f_low inclusive for Edge
        let m = amt_threshold(&bytes(1, 2, &[150, 50]), 50.0, 150.0).unwrap();
        assert_eq!(m.cells(), &[Cell::High, Cell::Edge]);
        assert!(matches!(amt_threshold(&t, 150.0, 150.0), Err(Error::Argument(_))));
        assert!(matches!(amt_threshold(&t, 150.0, 300.0), Err(Error::Argument(_))));
    }

    #[test]
    fn trimap_rendering() {
        let m = TriMap::from_cells(1, 3, vec![Cell::Low, Cell::Edge, Cell::High], 50.0, 150.0).unwrap();
        assert_eq!(trimap_to_thermogram(&m).pixels(), &[0.0, 128.0, 255.0]);
        let all_high = TriMap::from_cells(2, 2, vec![Cell::High; 4], 50.0, 150.0).unwrap();
        assert!(trimap_to_thermogram(&all_high).pixels().iter().all(|&p| p == 255.0));
        let all_low = TriMap::from_cells(2, 2, vec![Cell::Low; 4], 50.0, 150.0).unwrap();
        assert!(trimap_to_thermogram(&all_low).pixels().iter().all(|&p| p == 0.0));
    }

    #[test]
    fn augment_identity_brightness_and_half_turn() {
        let t = bytes(3, 3, &[1, 2, 3, 4, 5, 6, 7, 8, 9]);
        assert_eq!(augment(&t, &AugmentSpec::IDENTITY).unwrap(), t);

        let half = Thermogram::filled(4, 4, 0.5, Scale::Unit).unwrap();
        let spec = AugmentSpec {
            brightness_delta: 0.1,
            ..AugmentSpec::IDENTITY
        };
        let out = augment(&half, &spec).unwrap();
        assert!(out.pixels().iter().all(|p| (p - 0.6).abs() < 1e-12));

        let t = bytes(2, 2, &[10, 20, 30, 40]);
        let spec = AugmentSpec {
            rotation: 180.0,
            ..AugmentSpec::IDENTITY
        };
        assert_eq!(augment(&t, &spec).unwrap().pixels(), &[40.0, 30.0, 20.0, 10.0]);
    }

    #[test]
    fn quarter_turn_is_counter_clockwise() {
        // [a b; c d] turned a quarter counter-clockwise is [b d; a c]
        let t = bytes(2, 2, &[1, 2, 3, 4]);
        let spec = AugmentSpec {
            rotation: 90.0,
            ..AugmentSpec::IDENTITY
        };
        assert_eq!(augment(&t, &spec).unwrap().pixels(), &[2.0, 4.0, 1.0, 3.0]);
    }

    #[test]
    fn augment_rejects_non_positive_scale() {
        let t = bytes(1, 1, &[1]);
        let spec = AugmentSpec {
            scale: 0.0,
            ..AugmentSpec::IDENTITY
        };
        assert!(augment(&t, &spec).is_err());
    }

    #[test]
    fn expand_counts_and_determinism() {
        let t = bytes(4, 4, &[10, 60, 120, 200, 30, 90, 160, 255, 0, 50, 150, 250, 70, 80, 90, 100]);
        let one = expand(&t, 1, 3).unwrap();
        assert_eq!(one.len(), 1);
        assert_eq!(one, expand(&t, 1, 3).unwrap());
        let five = expand(&t, 5, 3).unwrap();
        assert_eq!(five.len(), 5);
        assert!(five.iter().all(|c| (c.height(), c.width()) == (4, 4)));
        let other = expand(&t, 5, 4).unwrap();
        assert!(five.iter().zip(&other).any(|(a, b)| a != b));
        assert!(matches!(expand(&t, 0, 3), Err(Error::Argument(_))));
    }

    #[test]
    fn normalize_cases() {
        let n = normalize(&bytes(1, 3, &[255, 0, 51]));
        assert_eq!(n.scale(), Scale::Unit);
        assert_eq!(n.pixels(), &[1.0, 0.0, 0.2]);
        assert_eq!(normalize(&n), n);
    }

    fn arb_image() -> impl Strategy<Value = Thermogram> {
        (1usize..12, 1usize..12).prop_flat_map(|(h, w)| {
            proptest::collection::vec(any::<u8>(), h * w).prop_map(move |v| Thermogram::from_bytes(h, w, &v).unwrap())
        })
    }

    proptest! {
        #[test]
        fn threshold_partition_matches_per_pixel_rule(t in arb_image(), lo in 0u8..200, gap in 1u8..55) {
            let (lo, hi) = (f64::from(lo), f64::from(lo) + f64::from(gap));
            let m = amt_threshold(&t, lo, hi).unwrap();
            for (p, c) in t.pixels().iter().zip(m.cells()) {
                let expected = if *p >= hi { Cell::High } else if *p < lo { Cell::Low } else { Cell::Edge };
                prop_assert_eq!(*c, expected);
            }
        }

        #[test]
        fn threshold_monotonicity(t in arb_image(), lo in 0u8..100, gap in 1u8..100, raise in 0u8..50, drop in 0u8..50) {
            let (lo, hi) = (f64::from(lo), f64::from(lo) + f64::from(gap));
            let base = amt_threshold(&t, lo, hi).unwrap();
            let raised = amt_threshold(&t, lo, hi + f64::from(raise)).unwrap();
            for (b, r) in base.cells().iter().zip(raised.cells()) {
                prop_assert!(!(*b != Cell::High && *r == Cell::High));
            }
            let lowered = amt_threshold(&t, (lo - f64::from(drop)).max(0.0), hi).unwrap();
            for (b, l) in base.cells().iter().zip(lowered.cells()) {
                prop_assert!(!(*b != Cell::Low && *l == Cell::Low));
            }
        }

        #[test]
        fn resize_keeps_constants(v in any::<u8>(), h in 1usize..9, w in 1usize..9, oh in 1usize..20, ow in 1usize..20) {
            let t = Thermogram::filled(h, w, f64::from(v), Scale::Byte).unwrap();
            let r = resize(&t, oh, ow).unwrap();
            prop_assert!(r.pixels().iter().all(|&p| p == f64::from(v)));
        }

        #[test]
        fn identity_augment_is_fixed_point(t in arb_image()) {
            prop_assert_eq!(augment(&t, &AugmentSpec::IDENTITY).unwrap(), t);
        }

        #[test]
        fn normalize_is_idempotent(t in arb_image()) {
            let once = normalize(&t);
            prop_assert_eq!(normalize(&once), once);
        }
    }
}
