use super::layers::{self, BackboneRef, Bound, DenseRef};
use super::{check_input, Activation, ForwardVars, Group, ModelConfig, ModelParams, Network};
use crate::autodiff::{Checkpoint, Tape, Tensor, Var};
use crate::error::{Error, Result};

pub(crate) const CONFIG_TAG: [u8; 4] = *b"MCFG";

/// Residual classifier standing in for the pretrained backbone.
///
/// Steps: `0` is the entry convolution and pooling, `1..=S` the residual
/// stages; the classifier follows the last stage.
#[derive(Clone, Debug)]
pub struct SourceModel {
    config: ModelConfig,
    params: ModelParams,
    backbone: BackboneRef,
    fc: DenseRef,
}

/// He-initialized source model. Each tensor draws from its own seeded stream.
pub fn build_source(cfg: &ModelConfig, seed: u64) -> Result<SourceModel> {
    cfg.validate()?;
    let mut params = ModelParams::new();
    layers::push_backbone(&mut params, cfg, seed);
    let last = *cfg.stage_channels.last().expect("validated");
    layers::push_dense(&mut params, "fc", Group::Classifier, (cfg.source_classes, last), seed);
    SourceModel::assemble(cfg.clone(), params)
}

impl SourceModel {
    fn assemble(config: ModelConfig, params: ModelParams) -> Result<Self> {
        let backbone = BackboneRef::resolve(&params, &config)?;
        let fc = layers::dense_ref(&params, "fc")?;
        Ok(SourceModel {
            config,
            params,
            backbone,
            fc,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    /// Number of forward steps before the classifier.
    pub fn steps(&self) -> usize {
        self.config.stages() + 1
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            tensors: self.params.to_named_tensors(),
            sections: vec![(CONFIG_TAG, self.config.to_toml_string().into_bytes())],
        }
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let cfg = config_section(ckpt)?;
        let mut model = build_source(&cfg, 0)?;
        model.params.load_from(ckpt)?;
        Ok(model)
    }

    fn run_step(&self, tape: &mut Tape, bound: &Bound, step: usize, x: Var) -> Result<Var> {
        if step == 0 {
            layers::entry(tape, bound, &self.backbone, x)
        } else {
            layers::stage(tape, bound, &self.backbone, step - 1, x)
        }
    }
}

pub(crate) fn config_section(ckpt: &Checkpoint) -> Result<ModelConfig> {
    let bytes = ckpt
        .section(&CONFIG_TAG)
        .ok_or_else(|| Error::Format("checkpoint has no model configuration".into()))?;
    let text = std::str::from_utf8(bytes).map_err(|_| Error::Format("model configuration is not utf-8".into()))?;
    ModelConfig::from_toml_str(text)
}

impl Network for SourceModel {
    fn params(&self) -> &ModelParams {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ModelParams {
        &mut self.params
    }

    fn is_trainable(&self, _i: usize) -> bool {
        true
    }

    fn frozen_steps(&self) -> usize {
        0
    }

    fn input_shape(&self) -> [usize; 3] {
        self.config.input_dims
    }

    fn prefix(&self, input: &Tensor, steps: usize) -> Result<Activation> {
        check_input(input, self.input_shape())?;
        if steps > self.steps() {
            return Err(Error::arg(format!("source model has {} steps, asked for {steps}", self.steps())));
        }
        let mut tape = Tape::new();
        let needed = |i| matches!(self.params.group(i), Group::Conv1 | Group::Stage(_));
        let bound = Bound::new(&mut tape, &self.params, needed, |_| false);
        let mut x = tape.constant(input.clone());
        let mut pooled = Vec::new();
        for step in 0..steps {
            x = self.run_step(&mut tape, &bound, step, x)?;
            if step > 0 {
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
        let needed = |i| match self.params.group(i) {
            Group::Conv1 => from_step == 0,
            Group::Stage(s) => s >= from_step,
            _ => true,
        };
        Bound::new(tape, &self.params, needed, |_| true)
    }

    fn forward_from(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        act: &Activation,
        _training: bool,
        _dropout_seed: u64,
    ) -> Result<ForwardVars> {
        let mut x = tape.constant(act.value.clone());
        let mut pooled: Vec<_> = act.pooled.iter().map(|p| tape.constant(p.clone())).collect();
        for step in act.step..self.steps() {
            x = self.run_step(tape, bound, step, x)?;
            if step > 0 {
                pooled.push(tape.global_avg_pool(x)?);
            }
        }
        let embedding = tape.concat(&pooled)?;
        let last = *pooled.last().expect("at least one stage");
        let logits = layers::dense(tape, bound, &self.fc, last)?;
        Ok(ForwardVars {
            logits,
            embedding,
            penultimate: last,
        })
    }
}
