use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Fidelity {
    /// Desk-scale network used for training and tests.
    Mini,
    /// ResNet50-sized layout; used for architecture checks, too large to train here.
    Full,
}

/// Architecture of the source backbone and the target head.
///
/// Stored on disk as TOML, e.g.
///
/// ```toml
/// fidelity = "mini"
/// input_dims = [3, 64, 64]
/// stem_channels = 16
/// stage_channels = [16, 32, 64, 128]
/// blocks_per_stage = [1, 1, 1, 1]
/// expansion = 4
/// head_dims = [64]
/// source_classes = 4
/// dropout = 0.5
/// ```
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub fidelity: Fidelity,
    /// Source input `(channels, height, width)`; the target reads one channel
    /// at the same height and width.
    pub input_dims: [usize; 3],
    /// Output width of the 7x7 entry convolution.
    pub stem_channels: usize,
    /// Output width of each residual stage, after bottleneck expansion.
    pub stage_channels: Vec<usize>,
    pub blocks_per_stage: Vec<usize>,
    pub expansion: usize,
    /// Hidden dense widths of the target head.
    pub head_dims: Vec<usize>,
    /// Width of the source classifier (ImageNet's 1000, or the pretext task's).
    pub source_classes: usize,
    pub dropout: f64,
}

impl ModelConfig {
    pub fn mini() -> Self {
        ModelConfig {
            fidelity: Fidelity::Mini,
            input_dims: [3, 64, 64],
            stem_channels: 16,
            stage_channels: vec![16, 32, 64, 128],
            blocks_per_stage: vec![1, 1, 1, 1],
            expansion: 4,
            head_dims: vec![64],
            source_classes: 4,
            dropout: 0.5,
        }
    }

    pub fn full() -> Self {
        ModelConfig {
            fidelity: Fidelity::Full,
            input_dims: [3, 256, 256],
            stem_channels: 64,
            stage_channels: vec![256, 512, 1024, 2048],
            blocks_per_stage: vec![3, 4, 6, 3],
            expansion: 4,
            head_dims: vec![128],
            source_classes: 1000,
            dropout: 0.5,
        }
    }

    pub fn for_fidelity(fidelity: Fidelity) -> Self {
        match fidelity {
            Fidelity::Mini => ModelConfig::mini(),
            Fidelity::Full => ModelConfig::full(),
        }
    }

    pub fn stages(&self) -> usize {
        self.stage_channels.len()
    }

    pub fn image_dims(&self) -> (usize, usize) {
        (self.input_dims[1], self.input_dims[2])
    }

    /// Length of the concatenated per-stage pooled features.
    pub fn embedding_len(&self) -> usize {
        self.stage_channels.iter().sum()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.stage_channels.is_empty() {
            return bad("at least one residual stage is required".into());
        }
        if self.stage_channels.len() != self.blocks_per_stage.len() {
            return bad(format!(
                "{} stage widths but {} block counts",
                self.stage_channels.len(),
                self.blocks_per_stage.len()
            ));
        }
        if self.blocks_per_stage.contains(&0) {
            return bad("every stage needs at least one block".into());
        }
        if self.expansion == 0 {
            return bad("expansion must be positive".into());
        }
        if let Some(w) = self.stage_channels.iter().find(|&&w| w == 0 || w % self.expansion != 0) {
            return bad(format!("stage width {w} is not a positive multiple of expansion {}", self.expansion));
        }
        if self.input_dims.contains(&0) || self.stem_channels == 0 || self.source_classes == 0 {
            return bad("dimensions must be positive".into());
        }
        if self.head_dims.contains(&0) {
            return bad("head widths must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        Ok(())
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: ModelConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("model config serializes")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        ModelConfig::from_toml_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }
}
