//! Residual backbone construction and the shared forward building blocks.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::{Group, ModelConfig, ModelParams};
use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::seed;

/// Parameter indices of one convolution plus its geometry.
#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvRef {
    pub weight: usize,
    pub bias: usize,
    pub stride: usize,
    pub padding: usize,
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct DenseRef {
    pub weight: usize,
    pub bias: usize,
}

#[derive(Clone, Debug)]
pub(crate) struct BlockRef {
    pub reduce: ConvRef,
    pub spatial: ConvRef,
    pub expand: ConvRef,
    pub shortcut: Option<ConvRef>,
}

/// Where the backbone's tensors live inside a [`ModelParams`].
#[derive(Clone, Debug)]
pub(crate) struct BackboneRef {
    pub conv1: ConvRef,
    pub stages: Vec<Vec<BlockRef>>,
}

/// He-normal weights (`std = sqrt(2 / fan_in)`) and zero biases.
pub(crate) fn he_tensor(shape: &[usize], fan_in: usize, rng: &mut impl Rng) -> Tensor {
    let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("finite std");
    let mut t = Tensor::zeros(shape);
    for v in t.data_mut() {
        *v = normal.sample(rng);
    }
    t
}

/// Appends a He-initialized convolution; stream ids come from the parameter count.
pub(crate) fn push_conv(
    params: &mut ModelParams,
    name: &str,
    group: Group,
    (out_c, in_c, k): (usize, usize, usize),
    seed: u64,
) {
    let mut rng = seed::rng(seed, params.len() as u64);
    let w = he_tensor(&[out_c, in_c, k, k], in_c * k * k, &mut rng);
    params.push(format!("{name}.weight"), w, group);
    params.push(format!("{name}.bias"), Tensor::zeros(&[out_c]), group);
}

pub(crate) fn push_dense(params: &mut ModelParams, name: &str, group: Group, (out_n, in_n): (usize, usize), seed: u64) {
    let mut rng = seed::rng(seed, params.len() as u64);
    let w = he_tensor(&[out_n, in_n], in_n, &mut rng);
    params.push(format!("{name}.weight"), w, group);
    params.push(format!("{name}.bias"), Tensor::zeros(&[out_n]), group);
}

fn block_name(stage: usize, block: usize) -> String {
    format!("stage{}.block{}", stage + 1, block + 1)
}

fn stage_stride(stage: usize, block: usize) -> usize {
    if stage > 0 && block == 0 {
        2
    } else {
        1
    }
}

/// Appends conv1 and every bottleneck block.
pub(crate) fn push_backbone(params: &mut ModelParams, cfg: &ModelConfig, seed: u64) {
    push_conv(params, "conv1", Group::Conv1, (cfg.stem_channels, cfg.input_dims[0], 7), seed);
    let mut in_c = cfg.stem_channels;
    for (s, (&width, &blocks)) in cfg.stage_channels.iter().zip(&cfg.blocks_per_stage).enumerate() {
        let mid = width / cfg.expansion;
        let group = Group::Stage(s + 1);
        for b in 0..blocks {
            let name = block_name(s, b);
            push_conv(params, &format!("{name}.reduce"), group, (mid, in_c, 1), seed);
            push_conv(params, &format!("{name}.spatial"), group, (mid, mid, 3), seed);
            push_conv(params, &format!("{name}.expand"), group, (width, mid, 1), seed);
            if in_c != width || stage_stride(s, b) != 1 {
                push_conv(params, &format!("{name}.shortcut"), group, (width, in_c, 1), seed);
            }
            in_c = width;
        }
    }
}

fn find(params: &ModelParams, name: &str) -> Result<usize> {
    params
        .index_of(name)
        .ok_or_else(|| Error::Format(format!("missing parameter {name}")))
}

pub(crate) fn conv_ref(params: &ModelParams, name: &str, stride: usize, padding: usize) -> Result<ConvRef> {
    Ok(ConvRef {
        weight: find(params, &format!("{name}.weight"))?,
        bias: find(params, &format!("{name}.bias"))?,
        stride,
        padding,
    })
}

pub(crate) fn dense_ref(params: &ModelParams, name: &str) -> Result<DenseRef> {
    Ok(DenseRef {
        weight: find(params, &format!("{name}.weight"))?,
        bias: find(params, &format!("{name}.bias"))?,
    })
}

impl BackboneRef {
    pub(crate) fn resolve(params: &ModelParams, cfg: &ModelConfig) -> Result<Self> {
        let conv1 = conv_ref(params, "conv1", 2, 3)?;
        let mut stages = Vec::with_capacity(cfg.stages());
        for (s, &blocks) in cfg.blocks_per_stage.iter().enumerate() {
            let mut refs = Vec::with_capacity(blocks);
            for b in 0..blocks {
                let name = block_name(s, b);
                let stride = stage_stride(s, b);
                let shortcut_name = format!("{name}.shortcut.weight");
                refs.push(BlockRef {
                    reduce: conv_ref(params, &format!("{name}.reduce"), 1, 0)?,
                    spatial: conv_ref(params, &format!("{name}.spatial"), stride, 1)?,
                    expand: conv_ref(params, &format!("{name}.expand"), 1, 0)?,
                    shortcut: match params.index_of(&shortcut_name) {
                        Some(_) => Some(conv_ref(params, &format!("{name}.shortcut"), stride, 0)?),
                        None => None,
                    },
                });
            }
            stages.push(refs);
        }
        Ok(BackboneRef { conv1, stages })
    }
}

/// Tape handles for a model's parameters; `None` for parameters not needed
/// by the current forward pass.
#[derive(Clone, Debug)]
pub struct Bound {
    vars: Vec<Option<Var>>,
}

impl Bound {
    /// Records the selected parameters on `tape`, trainable ones as gradient
    /// leaves and the rest as constants.
    pub(crate) fn new(
        tape: &mut Tape,
        params: &ModelParams,
        mut needed: impl FnMut(usize) -> bool,
        mut trainable: impl FnMut(usize) -> bool,
    ) -> Self {
        let vars = (0..params.len())
            .map(|i| {
                needed(i).then(|| {
                    let t = params.tensor(i).clone();
                    if trainable(i) {
                        tape.param(t)
                    } else {
                        tape.constant(t)
                    }
                })
            })
            .collect();
        Bound { vars }
    }

    /// The handle for parameter `i`, if it was bound.
    pub fn get(&self, i: usize) -> Option<Var> {
        self.vars.get(i).copied().flatten()
    }

    pub(crate) fn var(&self, i: usize) -> Result<Var> {
        self.get(i)
            .ok_or_else(|| Error::arg(format!("parameter {i} is not bound for this forward pass")))
    }

    /// Bound parameters that receive gradients, as `(param index, var)`.
    pub fn trainable<'a>(&'a self, tape: &'a Tape) -> impl Iterator<Item = (usize, Var)> + 'a {
        self.vars
            .iter()
            .enumerate()
            .filter_map(|(i, v)| v.map(|v| (i, v)))
            .filter(move |(_, v)| tape.requires_grad(*v))
    }
}

pub(crate) fn conv(tape: &mut Tape, bound: &Bound, c: &ConvRef, x: Var) -> Result<Var> {
    tape.conv2d(x, bound.var(c.weight)?, bound.var(c.bias)?, c.stride, c.padding)
}

pub(crate) fn dense(tape: &mut Tape, bound: &Bound, d: &DenseRef, x: Var) -> Result<Var> {
    tape.dense(x, bound.var(d.weight)?, bound.var(d.bias)?)
}

/// Entry convolution, ReLU and 3x3/2 max pooling.
pub(crate) fn entry(tape: &mut Tape, bound: &Bound, r: &BackboneRef, x: Var) -> Result<Var> {
    let y = conv(tape, bound, &r.conv1, x)?;
    let y = tape.relu(y);
    tape.max_pool(y, 3, 2, 1)
}

fn bottleneck(tape: &mut Tape, bound: &Bound, b: &BlockRef, x: Var) -> Result<Var> {
    let y = conv(tape, bound, &b.reduce, x)?;
    let y = tape.relu(y);
    let y = conv(tape, bound, &b.spatial, y)?;
    let y = tape.relu(y);
    let y = conv(tape, bound, &b.expand, y)?;
    let skip = match &b.shortcut {
        Some(s) => conv(tape, bound, s, x)?,
        None => x,
    };
    let y = tape.add(y, skip)?;
    Ok(tape.relu(y))
}

/// Runs residual stage `s` (zero-based).
pub(crate) fn stage(tape: &mut Tape, bound: &Bound, r: &BackboneRef, s: usize, mut x: Var) -> Result<Var> {
    for b in &r.stages[s] {
        x = bottleneck(tape, bound, b, x)?;
    }
    Ok(x)
}
