use std::path::Path;

use super::data::Dataset;
use super::train::{predict, ClassicalModels};
use crate::autodiff::{read_checkpoint, write_checkpoint, Checkpoint};
use crate::error::Result;
use crate::network::{AdaptationMap, TargetModel};

/// A trained target with its adaptation map and optional classical stage,
/// stored together in one checkpoint.
#[derive(Clone, Debug)]
pub struct TrainedModel {
    pub model: TargetModel,
    pub map: AdaptationMap,
    pub classical: Option<ClassicalModels>,
}

impl TrainedModel {
    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ckpt = self.model.to_checkpoint();
        ckpt.tensors.extend(self.map.to_named_tensors());
        if let Some(c) = &self.classical {
            c.append_to(&mut ckpt);
        }
        ckpt
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        Ok(TrainedModel {
            model: TargetModel::from_checkpoint(ckpt)?,
            map: AdaptationMap::from_checkpoint(ckpt)?,
            classical: ClassicalModels::from_checkpoint(ckpt)?,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_checkpoint(&self.to_checkpoint(), path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        TrainedModel::from_checkpoint(&read_checkpoint(path)?)
    }

    pub fn predict(&self, data: &Dataset) -> Result<Vec<usize>> {
        predict(&self.model, self.classical.as_ref(), data)
    }
}
