//! Flat key-value run configuration shared by the library entry points and
//! the command line.
//!
//! Stored as TOML with one key per line. Every key is optional; missing keys
//! take the defaults below. The resolved configuration is echoed into each
//! output directory as `config.echo`.
//!
//! | key | default | meaning |
//! |---|---|---|
//! | `seed` | 7 | root seed for every random stream |
//! | `fidelity` | `"mini"` | `mini` or `full` model layout |
//! | `image_size` | 64 | square image side fed to the network |
//! | `n_per_class` | 100 | synthetic origins per class |
//! | `include_mid` | true | generate mid-phase hard cases |
//! | `copies` | 5 | preprocessed variants per origin |
//! | `train_fraction` | 0.8 | origin-stratified train share |
//! | `epochs` | 20 | training epochs |
//! | `batch_size` | 16 | samples per update (at least 2) |
//! | `learn_rate` | 0.01 | SGD step size |
//! | `top_l` | 2 | trainable backbone groups, deepest first |
//! | `use_thresholding` | true | tri-level thresholding before augmentation |
//! | `lambda`, `alpha`, `beta` | 1e-3, 1.0, 0.1 | adaptation penalty, contrastive decay, contrastive weight |
//! | `crl_sign` | `"separability"` | or `"as-written"` |
//! | `crl_features` | `"mcfe"` | or `"penultimate"` |
//! | `crl_normalize` | true | unit-length embeddings inside the contrastive loss |
//! | `map_kind` | `"scalar"` | adaptation map structure, `scalar` or `dense` |
//! | `ensemble` | true | fuse network, SVM and forest scores |
//! | `ensemble_weights` | `[1, 1, 1]` | network, SVM, forest |
//! | `svm_epochs`, `svm_learn_rate`, `svm_reg` | 30, 0.01, 1e-3 | linear SVM |
//! | `rf_trees`, `rf_max_depth` | 50, 8 | random forest |
//! | `pretrain_per_class`, `pretrain_epochs`, `pretrain_learn_rate` | 150, 6, 0.02 | source pretext task |

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::classical::{ForestConfig, SvmConfig};
use crate::error::{Error, Result};
use crate::network::{Fidelity, MapKind, ModelConfig};
use crate::objectives::{CrlFeatures, CrlSign, LossConfig};

pub const ECHO_FILE: &str = "config.echo";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub fidelity: Fidelity,
    pub image_size: usize,
    pub n_per_class: usize,
    pub include_mid: bool,
    pub copies: usize,
    pub train_fraction: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learn_rate: f64,
    pub top_l: usize,
    pub use_thresholding: bool,
    pub lambda: f64,
    pub alpha: f64,
    pub beta: f64,
    pub crl_sign: CrlSign,
    pub crl_features: CrlFeatures,
    pub crl_normalize: bool,
    pub map_kind: MapKind,
    pub ensemble: bool,
    pub ensemble_weights: Vec<f64>,
    pub svm_epochs: usize,
    pub svm_learn_rate: f64,
    pub svm_reg: f64,
    pub rf_trees: usize,
    pub rf_max_depth: usize,
    pub pretrain_per_class: usize,
    pub pretrain_epochs: usize,
    pub pretrain_learn_rate: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let loss = LossConfig::default();
        let svm = SvmConfig::default();
        let forest = ForestConfig::default();
        RunConfig {
            seed: 7,
            fidelity: Fidelity::Mini,
            image_size: 64,
            n_per_class: 100,
            include_mid: true,
            copies: 5,
            train_fraction: 0.8,
            epochs: 20,
            batch_size: 16,
            learn_rate: 0.01,
            top_l: 2,
            use_thresholding: true,
            lambda: loss.lambda,
            alpha: loss.alpha,
            beta: loss.beta,
            crl_sign: loss.crl_sign,
            crl_features: loss.crl_features,
            crl_normalize: loss.crl_normalize,
            map_kind: MapKind::Scalar,
            ensemble: true,
            ensemble_weights: vec![1.0, 1.0, 1.0],
            svm_epochs: svm.epochs,
            svm_learn_rate: svm.learn_rate,
            svm_reg: svm.reg,
            rf_trees: forest.trees,
            rf_max_depth: forest.max_depth,
            pretrain_per_class: 150,
            pretrain_epochs: 6,
            pretrain_learn_rate: 0.02,
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        RunConfig::from_toml_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    /// Writes `config.echo` into `dir`.
    pub fn echo(&self, dir: &Path) -> Result<()> {
        let path = dir.join(ECHO_FILE);
        fs::write(&path, self.to_toml_string()).map_err(|e| Error::io(path, e))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(msg.to_string()));
        if self.epochs == 0 {
            return bad("epochs must be at least 1");
        }
        if self.batch_size < 2 {
            return bad("batch_size must be at least 2");
        }
        if self.copies == 0 || self.n_per_class == 0 {
            return bad("copies and n_per_class must be positive");
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return bad("train_fraction must lie strictly between 0 and 1");
        }
        if !(self.learn_rate >= 0.0 && self.pretrain_learn_rate >= 0.0) {
            return bad("learning rates must be non-negative");
        }
        if self.ensemble_weights.len() != 3 {
            return bad("ensemble_weights needs one weight each for network, SVM and forest");
        }
        self.loss().validate()?;
        self.model().validate()
    }

    pub fn loss(&self) -> LossConfig {
        LossConfig {
            lambda: self.lambda,
            alpha: self.alpha,
            beta: self.beta,
            crl_sign: self.crl_sign,
            crl_features: self.crl_features,
            crl_normalize: self.crl_normalize,
        }
    }

    /// Model layout for the configured fidelity, at `image_size` for mini runs.
    pub fn model(&self) -> ModelConfig {
        let mut m = ModelConfig::for_fidelity(self.fidelity);
        if self.fidelity == Fidelity::Mini {
            m.input_dims[1] = self.image_size;
            m.input_dims[2] = self.image_size;
        }
        m
    }

    pub fn svm(&self) -> SvmConfig {
        SvmConfig {
            epochs: self.svm_epochs,
            learn_rate: self.svm_learn_rate,
            reg: self.svm_reg,
        }
    }

    pub fn forest(&self) -> ForestConfig {
        ForestConfig {
            trees: self.rf_trees,
            max_depth: self.rf_max_depth,
            ..ForestConfig::default()
        }
    }
}
