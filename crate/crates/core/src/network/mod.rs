//! Residual source model, transfer target model, parameter adaptation and a
//! small from-scratch baseline.
//!
//! Forward passes are split into *steps* so that a trainer can evaluate the
//! frozen prefix once per sample, cache the resulting [`Activation`], and
//! replay only the trainable suffix on a fresh tape each batch.

mod adapt;
mod baseline;
mod config;
mod layers;
mod params;
mod source;
mod target;

pub use adapt::{adapt_features, AdaptationMap, LayerMap, MapKind};
pub use baseline::BaselineCnn;
pub use config::{Fidelity, ModelConfig};
pub use layers::Bound;
pub use params::{Group, ModelParams};
pub use source::{build_source, SourceModel};
pub use target::{build_target, build_target_with, mcfe_extract, set_trainable, TargetModel};

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::imaging::Thermogram;

/// Output of the first `step` forward steps for one input.
#[derive(Clone, Debug, PartialEq)]
pub struct Activation {
    pub step: usize,
    pub value: Tensor,
    /// Global-average-pooled outputs of the stages already completed.
    pub pooled: Vec<Tensor>,
}

/// Tape handles produced by a forward pass.
#[derive(Clone, Copy, Debug)]
pub struct ForwardVars {
    pub logits: Var,
    /// Multi-level embedding (concatenated per-stage pooled features).
    pub embedding: Var,
    /// Activation of the last hidden dense layer, before dropout.
    pub penultimate: Var,
}

/// Concrete values of a forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct ForwardOut {
    pub logits: Tensor,
    pub embedding: Tensor,
    pub penultimate: Tensor,
}

/// A trainable classifier whose forward pass is split into cacheable steps.
pub trait Network {
    fn params(&self) -> &ModelParams;
    fn params_mut(&mut self) -> &mut ModelParams;
    /// Whether parameter `i` receives gradient updates.
    fn is_trainable(&self, i: usize) -> bool;
    /// Number of leading steps that contain no trainable parameter.
    fn frozen_steps(&self) -> usize;
    /// Shape `[C, H, W]` the first step consumes.
    fn input_shape(&self) -> [usize; 3];
    /// Evaluates steps `0..steps` outside of any training tape.
    fn prefix(&self, input: &Tensor, steps: usize) -> Result<Activation>;
    /// Binds the parameters used from step `from_step` onward.
    fn bind(&self, tape: &mut Tape, from_step: usize) -> Bound;
    /// Continues a forward pass from a cached activation.
    fn forward_from(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        act: &Activation,
        training: bool,
        dropout_seed: u64,
    ) -> Result<ForwardVars>;

    /// Full inference pass.
    fn forward(&self, input: &Tensor) -> Result<ForwardOut> {
        let act = self.prefix(input, 0)?;
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, 0);
        let vars = self.forward_from(&mut tape, &bound, &act, false, 0)?;
        Ok(ForwardOut {
            logits: tape.value(vars.logits).clone(),
            embedding: tape.value(vars.embedding).clone(),
            penultimate: tape.value(vars.penultimate).clone(),
        })
    }
}

/// `[1, H, W]` tensor of intensities rescaled to `[0, 1]`.
pub fn image_tensor(t: &Thermogram) -> Tensor {
    let max = t.scale().max();
    let data = t.pixels().iter().map(|p| p / max).collect();
    Tensor::new(vec![1, t.height(), t.width()], data).expect("thermogram dims are consistent")
}

/// Replicates a one-channel tensor across `channels`.
pub fn replicate_channels(x: &Tensor, channels: usize) -> Result<Tensor> {
    let &[1, h, w] = x.shape() else {
        return Err(Error::shape(format!("expected a [1,H,W] image, got {:?}", x.shape())));
    };
    let data = x.data().repeat(channels);
    Tensor::new(vec![channels, h, w], data)
}

pub(crate) fn check_input(x: &Tensor, want: [usize; 3]) -> Result<()> {
    if x.shape() != want {
        return Err(Error::shape(format!("network expects input {want:?}, got {:?}", x.shape())));
    }
    Ok(())
}
