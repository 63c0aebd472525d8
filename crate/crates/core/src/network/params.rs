use std::collections::HashMap;

use crate::autodiff::{Checkpoint, Tensor};
use crate::error::{Error, Result};

/// Which freezable part of a model a parameter belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Group {
    /// The target's grayscale-to-three-channel convolutions.
    Stem,
    /// The 7x7 entry convolution of the backbone.
    Conv1,
    /// A residual stage, counted from the input side.
    Stage(usize),
    /// The target's dense head (always trainable).
    Head,
    /// The source classifier, removed during transfer.
    Classifier,
}

/// Named, ordered parameter tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ModelParams {
    names: Vec<String>,
    tensors: Vec<Tensor>,
    groups: Vec<Group>,
    index: HashMap<String, usize>,
}

impl ModelParams {
    pub fn new() -> Self {
        ModelParams::default()
    }

    pub(crate) fn push(&mut self, name: impl Into<String>, tensor: Tensor, group: Group) -> usize {
        let name = name.into();
        assert!(!self.index.contains_key(&name), "duplicate parameter {name}");
        let i = self.names.len();
        self.index.insert(name.clone(), i);
        self.names.push(name);
        self.tensors.push(tensor);
        self.groups.push(group);
        i
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.index_of(name).map(|i| &self.tensors[i])
    }

    pub fn name(&self, i: usize) -> &str {
        &self.names[i]
    }

    pub fn tensor(&self, i: usize) -> &Tensor {
        &self.tensors[i]
    }

    pub fn tensor_mut(&mut self, i: usize) -> &mut Tensor {
        &mut self.tensors[i]
    }

    pub fn group(&self, i: usize) -> Group {
        self.groups[i]
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor, Group)> {
        self.names
            .iter()
            .zip(&self.tensors)
            .zip(&self.groups)
            .map(|((n, t), g)| (n.as_str(), t, *g))
    }

    /// Total number of scalar parameters.
    pub fn count(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    pub fn count_group(&self, group: Group) -> usize {
        self.iter().filter(|(_, _, g)| *g == group).map(|(_, t, _)| t.numel()).sum()
    }

    pub fn count_prefix(&self, prefix: &str) -> usize {
        self.iter()
            .filter(|(n, _, _)| n.starts_with(prefix))
            .map(|(_, t, _)| t.numel())
            .sum()
    }

    /// FNV-1a over names and value bits of the selected parameters.
    pub fn checksum(&self, mut select: impl FnMut(Group) -> bool) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut eat = |bytes: &[u8]| {
            for b in bytes {
                h ^= u64::from(*b);
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        };
        for (name, t, g) in self.iter() {
            if select(g) {
                eat(name.as_bytes());
                for v in t.data() {
                    eat(&v.to_bits().to_le_bytes());
                }
            }
        }
        h
    }

    pub fn to_named_tensors(&self) -> Vec<(String, Tensor)> {
        self.names.iter().cloned().zip(self.tensors.iter().cloned()).collect()
    }

    /// Overwrites every parameter from a checkpoint; names and shapes must match.
    pub fn load_from(&mut self, ckpt: &Checkpoint) -> Result<()> {
        for (name, t) in self.names.iter().zip(self.tensors.iter_mut()) {
            let src = ckpt
                .tensor(name)
                .ok_or_else(|| Error::Format(format!("checkpoint lacks parameter {name}")))?;
            if src.shape() != t.shape() {
                return Err(Error::shape(format!(
                    "checkpoint {name} has shape {:?}, model expects {:?}",
                    src.shape(),
                    t.shape()
                )));
            }
            *t = src.clone();
        }
        Ok(())
    }
}
