//! Browser bindings for the thermogram demo page. Frames cross the boundary
//! as row-major 8-bit grayscale buffers.

use wasm_bindgen::prelude::*;

pub mod frames {
    use thermobreath::imaging::{amt_threshold, augment, trimap_to_thermogram, AugmentSpec, Thermogram};
    use thermobreath::pipeline::{synth_image, Phase, SynthStyle};
    use thermobreath::seed;

    pub type Frame = Result<Vec<u8>, String>;

    fn phase(exhaling: bool, mid: bool) -> Phase {
        match (exhaling, mid) {
            (true, false) => Phase::ExhFull,
            (true, true) => Phase::ExhMid,
            (false, true) => Phase::InhMid,
            (false, false) => Phase::InhFull,
        }
    }

    fn load(pixels: &[u8], height: usize, width: usize) -> Result<Thermogram, String> {
        Thermogram::from_bytes(height, width, pixels).map_err(|e| e.to_string())
    }

    /// One synthetic `size`×`size` frame of the chosen phase.
    pub fn synth(exhaling: bool, mid: bool, size: usize, seed: u32) -> Frame {
        let mut rng = seed::rng(u64::from(seed), 0);
        synth_image(phase(exhaling, mid), (size, size), &SynthStyle::default(), &mut rng)
            .map(|t| t.to_bytes())
            .map_err(|e| e.to_string())
    }

    /// Tri-level map rendered as 0 / 128 / 255.
    pub fn threshold(pixels: &[u8], height: usize, width: usize, f_low: f64, f_high: f64) -> Frame {
        let map = amt_threshold(&load(pixels, height, width)?, f_low, f_high).map_err(|e| e.to_string())?;
        Ok(trimap_to_thermogram(&map).to_bytes())
    }

    /// Rotation in degrees, central zoom, then a brightness offset in 8-bit units.
    pub fn augment_with(pixels: &[u8], height: usize, width: usize, rotation: f64, scale: f64, brightness: f64) -> Frame {
        let spec = AugmentSpec {
            rotation,
            scale,
            brightness_delta: brightness,
        };
        augment(&load(pixels, height, width)?, &spec)
            .map(|t| t.to_bytes())
            .map_err(|e| e.to_string())
    }
}

fn js(r: frames::Frame) -> Result<Vec<u8>, JsValue> {
    r.map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn synth_frame(exhaling: bool, mid: bool, size: usize, seed: u32) -> Result<Vec<u8>, JsValue> {
    js(frames::synth(exhaling, mid, size, seed))
}

#[wasm_bindgen]
pub fn threshold_frame(pixels: &[u8], height: usize, width: usize, f_low: f64, f_high: f64) -> Result<Vec<u8>, JsValue> {
    js(frames::threshold(pixels, height, width, f_low, f_high))
}

#[wasm_bindgen]
pub fn augment_frame(
    pixels: &[u8],
    height: usize,
    width: usize,
    rotation: f64,
    scale: f64,
    brightness: f64,
) -> Result<Vec<u8>, JsValue> {
    js(frames::augment_with(pixels, height, width, rotation, scale, brightness))
}
