use super::layers::{self, Bound, ConvRef, DenseRef};
use super::{check_input, Activation, ForwardVars, Group, ModelParams, Network};
use crate::autodiff::{Tape, Tensor};
use crate::error::{Error, Result};

/// Plain convolutional classifier trained from scratch on `[1, H, W]` input:
/// three 3x3 convolution + ReLU + 2x2 pooling blocks, global pooling, one
/// dense hidden layer and two logits. Every parameter is trainable.
#[derive(Clone, Debug)]
pub struct BaselineCnn {
    input: [usize; 3],
    params: ModelParams,
    convs: Vec<ConvRef>,
    hidden: DenseRef,
    output: DenseRef,
}

impl BaselineCnn {
    pub const WIDTHS: [usize; 3] = [8, 16, 32];
    pub const HIDDEN: usize = 32;

    pub fn new(height: usize, width: usize, seed: u64) -> Result<Self> {
        let scale = 1 << Self::WIDTHS.len();
        if height < scale || width < scale {
            return Err(Error::shape(format!("baseline needs at least {scale}x{scale} input")));
        }
        let mut params = ModelParams::new();
        let mut in_c = 1;
        for (i, &w) in Self::WIDTHS.iter().enumerate() {
            layers::push_conv(&mut params, &format!("conv{}", i + 1), Group::Stage(i + 1), (w, in_c, 3), seed);
            in_c = w;
        }
        layers::push_dense(&mut params, "head.dense1", Group::Head, (Self::HIDDEN, in_c), seed);
        layers::push_dense(&mut params, "head.output", Group::Head, (2, Self::HIDDEN), seed);
        let convs = (1..=Self::WIDTHS.len())
            .map(|i| layers::conv_ref(&params, &format!("conv{i}"), 1, 1))
            .collect::<Result<_>>()?;
        Ok(BaselineCnn {
            input: [1, height, width],
            hidden: layers::dense_ref(&params, "head.dense1")?,
            output: layers::dense_ref(&params, "head.output")?,
            params,
            convs,
        })
    }
}

impl Network for BaselineCnn {
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
        self.input
    }

    fn prefix(&self, input: &Tensor, steps: usize) -> Result<Activation> {
        check_input(input, self.input)?;
        if steps != 0 {
            return Err(Error::arg("the baseline has no frozen prefix"));
        }
        Ok(Activation {
            step: 0,
            value: input.clone(),
            pooled: Vec::new(),
        })
    }

    fn bind(&self, tape: &mut Tape, _from_step: usize) -> Bound {
        Bound::new(tape, &self.params, |_| true, |_| true)
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
        let mut pooled = Vec::with_capacity(self.convs.len());
        for c in &self.convs {
            let y = layers::conv(tape, bound, c, x)?;
            let y = tape.relu(y);
            pooled.push(tape.global_avg_pool(y)?);
            x = tape.max_pool(y, 2, 2, 0)?;
        }
        let embedding = tape.concat(&pooled)?;
        let g = tape.global_avg_pool(x)?;
        let h = layers::dense(tape, bound, &self.hidden, g)?;
        let penultimate = tape.relu(h);
        let h = tape.dropout(penultimate, 0.5, training, dropout_seed)?;
        let logits = layers::dense(tape, bound, &self.output, h)?;
        Ok(ForwardVars {
            logits,
            embedding,
            penultimate,
        })
    }
}
