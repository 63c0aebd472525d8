use super::adapt::adapt_params;
use super::layers::{self, BackboneRef, Bound, ConvRef, DenseRef};
use super::source::{config_section, CONFIG_TAG};
use super::{check_input, image_tensor, Activation, AdaptationMap, ForwardVars, Group, MapKind, ModelConfig, ModelParams, Network, SourceModel};
use crate::autodiff::{Checkpoint, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::imaging::Thermogram;

const TOP_L_TAG: [u8; 4] = *b"TOPL";

/// Grayscale transfer classifier: a two-convolution stem lifting one channel
/// to three, the source backbone without its classifier, and a dense head
/// ending in two logits.
///
/// Steps: `0` stem, `1` entry convolution and pooling, `2..S+2` residual
/// stages; the head follows. Freezable groups, deepest first, are the stages
/// `S..=1`, then the entry convolution, then the stem. `top_l` of them are
/// trainable; the head always is.
#[derive(Clone, Debug)]
pub struct TargetModel {
    config: ModelConfig,
    params: ModelParams,
    stem: [ConvRef; 2],
    backbone: BackboneRef,
    hidden: Vec<DenseRef>,
    output: DenseRef,
    top_l: usize,
}

/// Stem kernel that copies input channel `c % in_c` to output channel `c`.
fn identity_kernel(out_c: usize, in_c: usize) -> Tensor {
    let mut k = Tensor::zeros(&[out_c, in_c, 3, 3]);
    for o in 0..out_c {
        let i = o % in_c;
        k.data_mut()[((o * in_c + i) * 3 + 1) * 3 + 1] = 1.0;
    }
    k
}

/// Target built on an identity-mapped copy of the source backbone, with the
/// whole backbone frozen.
pub fn build_target(source: &SourceModel) -> Result<TargetModel> {
    build_target_with(source, &AdaptationMap::identity(source, MapKind::Scalar), 0)
}

/// Target whose backbone is `map` applied to the source backbone. The head
/// draws He weights from `seed`.
pub fn build_target_with(source: &SourceModel, map: &AdaptationMap, seed: u64) -> Result<TargetModel> {
    let cfg = source.config().clone();
    let channels = cfg.input_dims[0];
    let mut params = ModelParams::new();
    params.push("stem.conv1.weight", identity_kernel(channels, 1), Group::Stem);
    params.push("stem.conv1.bias", Tensor::zeros(&[channels]), Group::Stem);
    params.push("stem.conv2.weight", identity_kernel(channels, channels), Group::Stem);
    params.push("stem.conv2.bias", Tensor::zeros(&[channels]), Group::Stem);

    let adapted = adapt_params(source.params(), map)?;
    for (name, t, g) in source.params().iter() {
        if g == Group::Classifier {
            continue;
        }
        let value = adapted
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t.clone())
            .unwrap_or_else(|| t.clone());
        params.push(name, value, g);
    }

    let mut width = *cfg.stage_channels.last().expect("validated");
    for (i, &h) in cfg.head_dims.iter().enumerate() {
        layers::push_dense(&mut params, &format!("head.dense{}", i + 1), Group::Head, (h, width), seed);
        width = h;
    }
    layers::push_dense(&mut params, "head.output", Group::Head, (2, width), seed);
    TargetModel::assemble(cfg, params, 0)
}

impl TargetModel {
    fn assemble(config: ModelConfig, params: ModelParams, top_l: usize) -> Result<Self> {
        let stem = [
            layers::conv_ref(&params, "stem.conv1", 1, 1)?,
            layers::conv_ref(&params, "stem.conv2", 1, 1)?,
        ];
        let backbone = BackboneRef::resolve(&params, &config)?;
        let hidden = (1..=config.head_dims.len())
            .map(|i| layers::dense_ref(&params, &format!("head.dense{i}")))
            .collect::<Result<_>>()?;
        let output = layers::dense_ref(&params, "head.output")?;
        let mut model = TargetModel {
            config,
            params,
            stem,
            backbone,
            hidden,
            output,
            top_l: 0,
        };
        model.set_top_l(top_l)?;
        Ok(model)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    /// Number of freezable groups: every stage, the entry convolution and the stem.
    pub fn freezable_groups(&self) -> usize {
        self.config.stages() + 2
    }

    /// Forward steps before the head.
    pub fn steps(&self) -> usize {
        self.config.stages() + 2
    }

    pub fn top_l(&self) -> usize {
        self.top_l
    }

    pub fn set_top_l(&mut self, top_l: usize) -> Result<()> {
        if top_l > self.freezable_groups() {
            return Err(Error::arg(format!(
                "top_l {top_l} exceeds the {} freezable layer groups",
                self.freezable_groups()
            )));
        }
        self.top_l = top_l;
        Ok(())
    }

    /// Forward step a group's parameters belong to; the head is step `steps()`.
    fn step_of(&self, group: Group) -> usize {
        match group {
            Group::Stem => 0,
            Group::Conv1 => 1,
            Group::Stage(s) => s + 1,
            Group::Head | Group::Classifier => self.steps(),
        }
    }

    pub fn group_trainable(&self, group: Group) -> bool {
        group == Group::Head || self.step_of(group) >= self.steps() - self.top_l
    }

    /// Backbone tensors (entry convolution and stages) as `(index, name)`.
    pub fn backbone_indices(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.params.len()).filter(|&i| matches!(self.params.group(i), Group::Conv1 | Group::Stage(_)))
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            tensors: self.params.to_named_tensors(),
            sections: vec![
                (CONFIG_TAG, self.config.to_toml_string().into_bytes()),
                (TOP_L_TAG, (self.top_l as u32).to_le_bytes().to_vec()),
            ],
        }
    }

    /// Restores a target saved by [`TargetModel::to_checkpoint`]; extra
    /// tensors and sections are ignored.
    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let cfg = config_section(ckpt)?;
        let source = super::build_source(&cfg, 0)?;
        let mut model = build_target(&source)?;
        model.params.load_from(ckpt)?;
        if let Some(bytes) = ckpt.section(&TOP_L_TAG) {
            let raw: [u8; 4] = bytes
                .try_into()
                .map_err(|_| Error::Format("top_l section must hold 4 bytes".into()))?;
            model.set_top_l(u32::from_le_bytes(raw) as usize)?;
        }
        Ok(model)
    }

    fn run_step(&self, tape: &mut Tape, bound: &Bound, step: usize, x: Var) -> Result<Var> {
        match step {
            0 => {
                let y = layers::conv(tape, bound, &self.stem[0], x)?;
                layers::conv(tape, bound, &self.stem[1], y)
            }
            1 => layers::entry(tape, bound, &self.backbone, x),
            s => layers::stage(tape, bound, &self.backbone, s - 2, x),
        }
    }

    pub fn forward_image(&self, image: &Thermogram) -> Result<super::ForwardOut> {
        self.forward(&image_tensor(image))
    }
}

/// Sets the number of trainable backbone groups, counted from the deepest.
pub fn set_trainable(mut model: TargetModel, top_l: usize) -> Result<TargetModel> {
    model.set_top_l(top_l)?;
    Ok(model)
}

/// Concatenated global-average-pooled outputs of every residual stage.
pub fn mcfe_extract(model: &TargetModel, image: &Thermogram) -> Result<Tensor> {
    let x = image_tensor(image);
    let act = model.prefix(&x, model.steps())?;
    let data = act.pooled.iter().flat_map(|p| p.data().iter().copied()).collect();
    Ok(Tensor::vector(data))
}

impl Network for TargetModel {
    fn params(&self) -> &ModelParams {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ModelParams {
        &mut self.params
    }

    fn is_trainable(&self, i: usize) -> bool {
        self.group_trainable(self.params.group(i))
    }

    fn frozen_steps(&self) -> usize {
        self.steps() - self.top_l
    }

    fn input_shape(&self) -> [usize; 3] {
        let (h, w) = self.config.image_dims();
        [1, h, w]
    }

    fn prefix(&self, input: &Tensor, steps: usize) -> Result<Activation> {
        check_input(input, self.input_shape())?;
        if steps > self.steps() {
            return Err(Error::arg(format!("target model has {} steps, asked for {steps}", self.steps())));
        }
        let mut tape = Tape::new();
        let bound = Bound::new(&mut tape, &self.params, |i| self.step_of(self.params.group(i)) < steps, |_| false);
        let mut x = tape.constant(input.clone());
        let mut pooled = Vec::new();
        for step in 0..steps {
            x = self.run_step(&mut tape, &bound, step, x)?;
            if step >= 2 {
                let p = tape.global_avg_pool(x)?;
                pooled.push(tape.value(p).clone());
            }
        }
        Ok(Activation {
            step: steps,
            value: tape.value(x).clone(),
            pooled,
        })
    }

    fn bind(&self, tape: &mut Tape, from_step: usize) -> Bound {
        Bound::new(
            tape,
            &self.params,
            |i| self.step_of(self.params.group(i)) >= from_step,
            |i| self.is_trainable(i),
        )
    }

    fn forward_from(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        act: &Activation,
        training: bool,
        dropout_seed: u64,
    ) -> Result<ForwardVars> {
        let mut x = tape.constant(act.value.clone());
        let mut pooled: Vec<_> = act.pooled.iter().map(|p| tape.constant(p.clone())).collect();
        for step in act.step..self.steps() {
            x = self.run_step(tape, bound, step, x)?;
            if step >= 2 {
                pooled.push(tape.global_avg_pool(x)?);
            }
        }
        let embedding = tape.concat(&pooled)?;
        let mut h = *pooled.last().expect("at least one stage");
        let mut penultimate = h;
        for (i, d) in self.hidden.iter().enumerate() {
            let y = layers::dense(tape, bound, d, h)?;
            penultimate = tape.relu(y);
            h = tape.dropout(penultimate, self.config.dropout, training, crate::seed::mix(dropout_seed, i as u64))?;
        }
        let logits = layers::dense(tape, bound, &self.output, h)?;
        Ok(ForwardVars {
            logits,
            embedding,
            penultimate,
        })
    }
}
