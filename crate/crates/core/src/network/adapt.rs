use super::{Group, ModelParams, Network, SourceModel};
use crate::autodiff::{Checkpoint, Tensor};
use crate::error::{Error, Result};

/// Structure of each per-layer map.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MapKind {
    /// One scale and one offset per layer.
    Scalar,
    /// A full `n x n` matrix and length-`n` offset over the flattened layer.
    Dense,
}

/// Affine map for one shared tensor: `target = linear · source + offset`.
///
/// Scalar maps hold `linear: [1]`, `offset: [1]`; dense maps hold
/// `linear: [n, n]`, `offset: [n]` for a source tensor of `n` values.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerMap {
    pub linear: Tensor,
    pub offset: Tensor,
}

impl LayerMap {
    pub fn identity(kind: MapKind, n: usize) -> Self {
        match kind {
            MapKind::Scalar => LayerMap {
                linear: Tensor::scalar(1.0),
                offset: Tensor::scalar(0.0),
            },
            MapKind::Dense => {
                let mut linear = Tensor::zeros(&[n, n]);
                for i in 0..n {
                    linear.data_mut()[i * n + i] = 1.0;
                }
                LayerMap {
                    linear,
                    offset: Tensor::zeros(&[n]),
                }
            }
        }
    }

    pub fn kind(&self) -> MapKind {
        if self.linear.rank() == 2 {
            MapKind::Dense
        } else {
            MapKind::Scalar
        }
    }

    /// Checks the map against a source tensor of `n` values.
    pub fn check(&self, name: &str, n: usize) -> Result<()> {
        let ok = match self.kind() {
            MapKind::Scalar => self.linear.shape() == [1] && self.offset.shape() == [1],
            MapKind::Dense => self.linear.shape() == [n, n] && self.offset.shape() == [n],
        };
        if ok {
            Ok(())
        } else {
            Err(Error::shape(format!(
                "adaptation map for {name} has linear {:?} and offset {:?}, layer has {n} values",
                self.linear.shape(),
                self.offset.shape()
            )))
        }
    }

    /// `linear · flatten(source) + offset`, reshaped like `source`.
    pub fn apply(&self, name: &str, source: &Tensor) -> Result<Tensor> {
        let n = source.numel();
        self.check(name, n)?;
        let out = match self.kind() {
            MapKind::Scalar => {
                let (s, o) = (self.linear.data()[0], self.offset.data()[0]);
                source.data().iter().map(|v| s * v + o).collect()
            }
            MapKind::Dense => {
                let m = self.linear.data();
                (0..n)
                    .map(|i| {
                        let row = &m[i * n..(i + 1) * n];
                        row.iter().zip(source.data()).map(|(a, b)| a * b).sum::<f64>() + self.offset.data()[i]
                    })
                    .collect()
            }
        };
        Tensor::new(source.shape().to_vec(), out)
    }
}

/// Per-layer affine maps over the backbone tensors shared by source and target.
#[derive(Clone, Debug, PartialEq)]
pub struct AdaptationMap {
    names: Vec<String>,
    maps: Vec<LayerMap>,
}

fn shared(group: Group) -> bool {
    matches!(group, Group::Conv1 | Group::Stage(_))
}

impl AdaptationMap {
    /// Identity maps for every backbone tensor of `source`.
    pub fn identity(source: &SourceModel, kind: MapKind) -> Self {
        let (names, maps) = source
            .params()
            .iter()
            .filter(|(_, _, g)| shared(*g))
            .map(|(n, t, _)| (n.to_string(), LayerMap::identity(kind, t.numel())))
            .unzip();
        AdaptationMap { names, maps }
    }

    pub fn from_layers(layers: Vec<(String, LayerMap)>) -> Self {
        let (names, maps) = layers.into_iter().unzip();
        AdaptationMap { names, maps }
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn layer(&self, name: &str) -> Option<&LayerMap> {
        self.names.iter().position(|n| n == name).map(|i| &self.maps[i])
    }

    pub fn layer_at(&self, i: usize) -> &LayerMap {
        &self.maps[i]
    }

    pub fn layer_at_mut(&mut self, i: usize) -> &mut LayerMap {
        &mut self.maps[i]
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &LayerMap)> {
        self.names.iter().map(String::as_str).zip(&self.maps)
    }

    /// Number of scalar map parameters.
    pub fn count(&self) -> usize {
        self.maps.iter().map(|m| m.linear.numel() + m.offset.numel()).sum()
    }

    /// Map tensors as `map.{layer}.linear` / `map.{layer}.offset`.
    pub fn to_named_tensors(&self) -> Vec<(String, Tensor)> {
        self.iter()
            .flat_map(|(n, m)| {
                [
                    (format!("map.{n}.linear"), m.linear.clone()),
                    (format!("map.{n}.offset"), m.offset.clone()),
                ]
            })
            .collect()
    }

    /// Reads every `map.*` tensor pair from a checkpoint.
    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let mut layers = Vec::new();
        for (name, linear) in &ckpt.tensors {
            let Some(layer) = name.strip_prefix("map.").and_then(|n| n.strip_suffix(".linear")) else {
                continue;
            };
            let offset = ckpt
                .tensor(&format!("map.{layer}.offset"))
                .ok_or_else(|| Error::Format(format!("map for {layer} has no offset")))?;
            layers.push((
                layer.to_string(),
                LayerMap {
                    linear: linear.clone(),
                    offset: offset.clone(),
                },
            ));
        }
        Ok(AdaptationMap::from_layers(layers))
    }
}

/// Applies `map` to the source backbone, giving `(name, target tensor)` for
/// every mapped layer.
pub fn adapt_features(source: &SourceModel, map: &AdaptationMap) -> Result<Vec<(String, Tensor)>> {
    adapt_params(source.params(), map)
}

pub(crate) fn adapt_params(params: &ModelParams, map: &AdaptationMap) -> Result<Vec<(String, Tensor)>> {
    map.iter()
        .map(|(name, m)| {
            let src = params
                .get(name)
                .ok_or_else(|| Error::shape(format!("adaptation map names {name}, absent from the source")))?;
            Ok((name.to_string(), m.apply(name, src)?))
        })
        .collect()
}
