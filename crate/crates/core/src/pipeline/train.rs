//! Minibatch training with cached frozen prefixes, followed by the
//! classical stage on extracted embeddings.

use std::time::Instant;

use rand::seq::SliceRandom;

use super::data::Dataset;
use super::log::{EpochRecord, RunLog};
use super::synth::pretext_generate;
use crate::autodiff::{softmax, Checkpoint, Tape, Tensor};
use crate::classical::{
    ensemble_predict, rf_train, svm_train, EnsembleWeights, ForestConfig, RandomForest, Standardizer, SvmConfig,
    LinearSvm, FOREST_TAG,
};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::eval::{compute_metrics, MetricReport};
use crate::imaging::normalize;
use crate::network::{
    build_source, image_tensor, replicate_channels, Activation, AdaptationMap, Fidelity, MapKind, ModelConfig,
    ModelParams, Network, SourceModel, TargetModel,
};
use crate::objectives::{crl_loss, kd_penalty, mine_pairs, total_loss, CrlFeatures, KdTerm, LossConfig};
use crate::seed;

/// One network input with its class index.
#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub input: Tensor,
    pub label: usize,
}

/// `[1, H, W]` examples from a dataset.
pub fn examples(d: &Dataset) -> Vec<Example> {
    d.samples
        .iter()
        .map(|s| Example {
            input: image_tensor(&s.image),
            label: s.label.index(),
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClassicalConfig {
    pub svm: SvmConfig,
    pub forest: ForestConfig,
    /// Network, SVM, forest.
    pub weights: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learn_rate: f64,
    /// Trainable backbone groups, deepest first.
    pub top_l: usize,
    pub use_thresholding: bool,
    pub loss: LossConfig,
    pub seed: u64,
    pub fidelity: Fidelity,
    pub map_kind: MapKind,
    /// Fit the SVM and forest after training and predict with the ensemble.
    pub classical: Option<ClassicalConfig>,
}

impl TrainConfig {
    pub fn from_run(cfg: &RunConfig) -> Self {
        TrainConfig {
            epochs: cfg.epochs,
            batch_size: cfg.batch_size,
            learn_rate: cfg.learn_rate,
            top_l: cfg.top_l,
            use_thresholding: cfg.use_thresholding,
            loss: cfg.loss(),
            seed: cfg.seed,
            fidelity: cfg.fidelity,
            map_kind: cfg.map_kind,
            classical: cfg.ensemble.then(|| ClassicalConfig {
                svm: cfg.svm(),
                forest: cfg.forest(),
                weights: cfg.ensemble_weights.clone(),
            }),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.batch_size < 2 {
            return Err(Error::Config("batch_size must be at least 2".into()));
        }
        if self.learn_rate.is_nan() || self.learn_rate < 0.0 {
            return Err(Error::Config("learn_rate must be non-negative".into()));
        }
        self.loss.validate()
    }

    /// Compact `key=value` snapshot stored with the run log.
    pub fn snapshot(&self) -> String {
        format!(
            "epochs={} batch_size={} learn_rate={} top_l={} use_thresholding={} lambda={} alpha={} beta={} crl_sign={:?} crl_features={:?} crl_normalize={} seed={} fidelity={:?} map_kind={:?} ensemble={}",
            self.epochs,
            self.batch_size,
            self.learn_rate,
            self.top_l,
            self.use_thresholding,
            self.loss.lambda,
            self.loss.alpha,
            self.loss.beta,
            self.loss.crl_sign,
            self.loss.crl_features,
            self.loss.crl_normalize,
            self.seed,
            self.fidelity,
            self.map_kind,
            self.classical.is_some()
        )
    }
}

/// Optimizer settings for [`fit`].
#[derive(Clone, Debug, PartialEq)]
pub struct FitSpec {
    pub epochs: usize,
    pub batch_size: usize,
    pub learn_rate: f64,
    pub seed: u64,
    pub loss: LossConfig,
}

/// Source tensors and the adaptation map regularizing a target during [`fit`].
pub struct KdSource<'a> {
    pub source: &'a ModelParams,
    pub map: &'a mut AdaptationMap,
}

fn argmax(x: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in x.iter().enumerate() {
        if *v > x[best] {
            best = i;
        }
    }
    best
}

/// Activations of the frozen prefix for every example.
fn cache<N: Network>(net: &N, data: &[Example]) -> Result<Vec<Activation>> {
    let steps = net.frozen_steps();
    data.iter().map(|e| net.prefix(&e.input, steps)).collect()
}

/// Mean cross-entropy, accuracy and predictions of `net` in inference mode.
fn evaluate<N: Network>(net: &N, acts: &[Activation], labels: &[usize]) -> Result<(f64, f64, Vec<[f64; 2]>)> {
    let mut loss = 0.0;
    let mut correct = 0;
    let mut probs = Vec::with_capacity(acts.len());
    let from = net.frozen_steps();
    for (act, &y) in acts.iter().zip(labels) {
        let mut tape = Tape::new();
        let bound = net.bind(&mut tape, from);
        let out = net.forward_from(&mut tape, &bound, act, false, 0)?;
        let logits = tape.value(out.logits).data();
        loss += crate::objectives::cross_entropy(tape.value(out.logits), y)?;
        correct += usize::from(argmax(logits) == y);
        let p = softmax(logits);
        probs.push([p[0], p.get(1).copied().unwrap_or(0.0)]);
    }
    let n = acts.len().max(1) as f64;
    Ok((loss / n, correct as f64 / n, probs))
}

/// Inference-mode embeddings for every cached activation.
fn embeddings<N: Network>(net: &N, acts: &[Activation], features: CrlFeatures) -> Result<Vec<Vec<f64>>> {
    let from = net.frozen_steps();
    acts.iter()
        .map(|act| {
            let mut tape = Tape::new();
            let bound = net.bind(&mut tape, from);
            let out = net.forward_from(&mut tape, &bound, act, false, 0)?;
            let v = match features {
                CrlFeatures::Mcfe => out.embedding,
                CrlFeatures::Penultimate => out.penultimate,
            };
            Ok(tape.value(v).data().to_vec())
        })
        .collect()
}

/// Seeded minibatch SGD on `mean CE + kd + β·crl` over the trainable
/// parameters of `net` (and of the adaptation map, when given). The frozen
/// prefix is evaluated once per example and reused every epoch.
pub fn fit<N: Network>(
    net: &mut N,
    train: &[Example],
    val: &[Example],
    spec: &FitSpec,
    mut kd: Option<KdSource<'_>>,
    log: &mut RunLog,
) -> Result<()> {
    if train.is_empty() {
        return Err(Error::arg("training set is empty"));
    }
    let started = Instant::now();
    let from = net.frozen_steps();
    let train_acts = cache(net, train)?;
    let val_acts = cache(net, val)?;
    let val_labels: Vec<usize> = val.iter().map(|e| e.label).collect();

    // (network parameter, map layer) pairs for trainable shared tensors.
    let kd_pairs: Vec<(usize, usize)> = match &kd {
        Some(k) if spec.loss.lambda > 0.0 => k
            .map
            .names()
            .iter()
            .enumerate()
            .filter_map(|(mi, name)| {
                let pi = net.params().index_of(name)?;
                net.is_trainable(pi).then_some((pi, mi))
            })
            .collect(),
        _ => Vec::new(),
    };

    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 0..spec.epochs {
        order.shuffle(&mut seed::rng(seed::mix(spec.seed, 0x5eed), epoch as u64));
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for (b, batch) in order.chunks(spec.batch_size).enumerate() {
            let step = || -> Result<(f64, usize, Vec<(usize, Tensor)>, Vec<(usize, Tensor, Tensor)>)> {
                let mut tape = Tape::new();
                let bound = net.bind(&mut tape, from);
                let mut logits = Vec::with_capacity(batch.len());
                let mut embeds = Vec::with_capacity(batch.len());
                let mut labels = Vec::with_capacity(batch.len());
                for &i in batch {
                    let dropout_seed = seed::mix(spec.seed, ((epoch as u64) << 32) | i as u64);
                    let out = net.forward_from(&mut tape, &bound, &train_acts[i], true, dropout_seed)?;
                    logits.push(out.logits);
                    let e = match spec.loss.crl_features {
                        CrlFeatures::Mcfe => out.embedding,
                        CrlFeatures::Penultimate => out.penultimate,
                    };
                    embeds.push(if spec.loss.crl_normalize { tape.l2_normalize(e) } else { e });
                    labels.push(train[i].label);
                }
                let mut map_vars = Vec::with_capacity(kd_pairs.len());
                let mut terms = Vec::with_capacity(kd_pairs.len());
                if let Some(k) = &kd {
                    for &(pi, mi) in &kd_pairs {
                        let layer = k.map.layer_at(mi);
                        let src = k.source.get(&k.map.names()[mi]).expect("map layers come from the source");
                        let term = KdTerm {
                            target: bound.var(pi)?,
                            source: tape.constant(src.clone()),
                            linear: tape.param(layer.linear.clone()),
                            offset: tape.param(layer.offset.clone()),
                        };
                        map_vars.push((mi, term.linear, term.offset));
                        terms.push(term);
                    }
                }
                let kd_var = kd_penalty(&mut tape, &terms, spec.loss.lambda)?;
                let crl_var = if spec.loss.beta > 0.0 {
                    let pairs = mine_pairs(&labels);
                    Some(crl_loss(&mut tape, &embeds, &pairs, spec.loss.alpha, spec.loss.crl_sign)?)
                } else {
                    None
                };
                let loss = total_loss(&mut tape, &logits, &labels, kd_var, crl_var, &spec.loss)?;
                let grads = tape.backward(loss)?;
                let hits = logits
                    .iter()
                    .zip(&labels)
                    .filter(|(l, y)| argmax(tape.value(**l).data()) == **y)
                    .count();
                let updates = bound
                    .trainable(&tape)
                    .filter_map(|(i, v)| grads.get(v).map(|g| (i, g.clone())))
                    .collect();
                let map_updates = map_vars
                    .iter()
                    .filter_map(|&(mi, l, o)| Some((mi, grads.get(l)?.clone(), grads.get(o)?.clone())))
                    .collect();
                Ok((tape.value(loss).item()?, hits, updates, map_updates))
            };
            let (loss, hits, updates, map_updates) = step().map_err(|e| Error::Batch {
                batch: b,
                source: Box::new(e),
            })?;
            if !loss.is_finite() {
                return Err(Error::Batch {
                    batch: b,
                    source: Box::new(Error::arg(format!("loss diverged to {loss}"))),
                });
            }
            loss_sum += loss * batch.len() as f64;
            correct += hits;
            for (i, g) in updates {
                sgd(net.params_mut().tensor_mut(i), &g, spec.learn_rate);
            }
            if let Some(k) = kd.as_mut() {
                for (mi, gl, go) in map_updates {
                    // Each map entry is shared by `fan` parameter entries, so
                    // its curvature is `fan` times larger; scale its step down.
                    let numel = k.source.get(&k.map.names()[mi]).map_or(1, Tensor::numel);
                    let layer = k.map.layer_at_mut(mi);
                    let lr = spec.learn_rate / (numel / layer.offset.numel().max(1)).max(1) as f64;
                    sgd(&mut layer.linear, &gl, lr);
                    sgd(&mut layer.offset, &go, lr);
                }
            }
        }
        let (val_loss, val_acc, _) = evaluate(net, &val_acts, &val_labels)?;
        let n = train.len() as f64;
        log.push(EpochRecord {
            epoch: 0,
            train_loss: loss_sum / n,
            train_acc: correct as f64 / n,
            val_loss,
            val_acc,
        });
    }
    log.wall_time += started.elapsed().as_secs_f64();
    Ok(())
}

fn sgd(param: &mut Tensor, grad: &Tensor, lr: f64) {
    for (p, g) in param.data_mut().iter_mut().zip(grad.data()) {
        *p -= lr * g;
    }
}

/// SVM and forest on standardized embeddings, fused with the network.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassicalModels {
    pub scaler: Standardizer,
    pub svm: LinearSvm,
    pub forest: RandomForest,
    pub weights: EnsembleWeights,
    pub features: CrlFeatures,
}

impl ClassicalModels {
    pub fn fit(features: &[Vec<f64>], labels: &[usize], cfg: &ClassicalConfig, kind: CrlFeatures, seed: u64) -> Result<Self> {
        let scaler = Standardizer::fit(features)?;
        let scaled = features.iter().map(|f| scaler.apply(f)).collect::<Result<Vec<_>>>()?;
        Ok(ClassicalModels {
            svm: svm_train(&scaled, labels, &cfg.svm, seed::mix(seed, 1))?,
            forest: rf_train(&scaled, labels, &cfg.forest, seed::mix(seed, 2))?,
            weights: EnsembleWeights::new(&cfg.weights)?,
            scaler,
            features: kind,
        })
    }

    /// Fused prediction from network class probabilities and an embedding.
    pub fn predict(&self, network: [f64; 2], embedding: &[f64]) -> Result<usize> {
        let x = self.scaler.apply(embedding)?;
        let scores = [network, self.svm.score(&x)?, self.forest.score(&x)?];
        ensemble_predict(&scores, &self.weights)
    }

    pub fn append_to(&self, ckpt: &mut Checkpoint) {
        ckpt.tensors.extend(self.scaler.to_named_tensors("scaler"));
        ckpt.tensors.extend(self.svm.to_named_tensors("svm"));
        ckpt.tensors.push(("ensemble.weights".into(), Tensor::vector(self.weights.weights().to_vec())));
        let kind = match self.features {
            CrlFeatures::Mcfe => 0.0,
            CrlFeatures::Penultimate => 1.0,
        };
        ckpt.tensors.push(("ensemble.features".into(), Tensor::scalar(kind)));
        ckpt.sections.push((FOREST_TAG, self.forest.to_section()));
    }

    /// Reads models written by [`ClassicalModels::append_to`]; `None` when absent.
    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Option<Self>> {
        let Some(section) = ckpt.section(&FOREST_TAG) else {
            return Ok(None);
        };
        let weights = ckpt
            .tensor("ensemble.weights")
            .ok_or_else(|| Error::Format("checkpoint lacks ensemble.weights".into()))?;
        let kind = ckpt.tensor("ensemble.features").map(|t| t.data()[0]).unwrap_or(0.0);
        Ok(Some(ClassicalModels {
            scaler: Standardizer::from_checkpoint(ckpt, "scaler")?,
            svm: LinearSvm::from_checkpoint(ckpt, "svm")?,
            forest: RandomForest::from_section(section)?,
            weights: EnsembleWeights::new(weights.data())?,
            features: if kind == 1.0 { CrlFeatures::Penultimate } else { CrlFeatures::Mcfe },
        }))
    }
}

/// Everything a training run produces.
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub log: RunLog,
    pub classical: Option<ClassicalModels>,
    /// Final predictions on the validation set (ensemble when enabled).
    pub predictions: Vec<usize>,
    pub metrics: MetricReport,
}

/// Trains `model` on `data` per `cfg`: SGD epochs, then (optionally) the
/// SVM and forest on training-set embeddings. Validation metrics use the
/// final model.
pub fn train(
    model: &mut TargetModel,
    source: &SourceModel,
    map: &mut AdaptationMap,
    data: (&Dataset, &Dataset),
    cfg: &TrainConfig,
    name: &str,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    model.set_top_l(cfg.top_l)?;
    let (train_set, val_set) = (examples(data.0), examples(data.1));
    let mut log = RunLog::new(name, cfg.snapshot());
    let spec = FitSpec {
        epochs: cfg.epochs,
        batch_size: cfg.batch_size,
        learn_rate: cfg.learn_rate,
        seed: cfg.seed,
        loss: cfg.loss,
    };
    let kd = KdSource {
        source: source.params(),
        map,
    };
    fit(model, &train_set, &val_set, &spec, Some(kd), &mut log)?;
    finish(model, &train_set, &val_set, cfg, log)
}

/// Trains any network without adaptation, as used by the from-scratch baseline.
pub fn train_plain<N: Network>(net: &mut N, data: (&Dataset, &Dataset), cfg: &TrainConfig, name: &str) -> Result<TrainOutcome> {
    cfg.validate()?;
    let (train_set, val_set) = (examples(data.0), examples(data.1));
    let mut log = RunLog::new(name, cfg.snapshot());
    let spec = FitSpec {
        epochs: cfg.epochs,
        batch_size: cfg.batch_size,
        learn_rate: cfg.learn_rate,
        seed: cfg.seed,
        loss: cfg.loss,
    };
    fit(net, &train_set, &val_set, &spec, None, &mut log)?;
    finish(net, &train_set, &val_set, cfg, log)
}

fn finish<N: Network>(
    net: &N,
    train_set: &[Example],
    val_set: &[Example],
    cfg: &TrainConfig,
    mut log: RunLog,
) -> Result<TrainOutcome> {
    let started = Instant::now();
    let val_acts = cache(net, val_set)?;
    let val_labels: Vec<usize> = val_set.iter().map(|e| e.label).collect();
    let (_, _, probs) = evaluate(net, &val_acts, &val_labels)?;
    let (classical, predictions) = match &cfg.classical {
        Some(cc) => {
            let kind = cfg.loss.crl_features;
            let train_acts = cache(net, train_set)?;
            let feats = embeddings(net, &train_acts, kind)?;
            let labels: Vec<usize> = train_set.iter().map(|e| e.label).collect();
            let models = ClassicalModels::fit(&feats, &labels, cc, kind, cfg.seed)?;
            let val_feats = embeddings(net, &val_acts, kind)?;
            let preds = probs
                .iter()
                .zip(&val_feats)
                .map(|(p, f)| models.predict(*p, f))
                .collect::<Result<Vec<_>>>()?;
            (Some(models), preds)
        }
        None => (None, probs.iter().map(|p| usize::from(p[1] > p[0])).collect()),
    };
    let metrics = compute_metrics(&predictions, &val_labels)?;
    log.wall_time += started.elapsed().as_secs_f64();
    Ok(TrainOutcome {
        log,
        classical,
        predictions,
        metrics,
    })
}

/// Predictions of a trained target (plus optional classical stage) on `data`.
pub fn predict(model: &TargetModel, classical: Option<&ClassicalModels>, data: &Dataset) -> Result<Vec<usize>> {
    let set = examples(data);
    let acts = cache(model, &set)?;
    let labels: Vec<usize> = set.iter().map(|e| e.label).collect();
    let (_, _, probs) = evaluate(model, &acts, &labels)?;
    match classical {
        Some(c) => {
            let feats = embeddings(model, &acts, c.features)?;
            probs.iter().zip(&feats).map(|(p, f)| c.predict(*p, f)).collect()
        }
        None => Ok(probs.iter().map(|p| usize::from(p[1] > p[0])).collect()),
    }
}

/// Source model pretrained on the four-way plume-position pretext task.
pub fn pretrain_source(
    cfg: &ModelConfig,
    per_class: usize,
    epochs: usize,
    learn_rate: f64,
    seed: u64,
) -> Result<(SourceModel, RunLog)> {
    let mut source = build_source(cfg, seed)?;
    let (_, h, w) = (cfg.input_dims[0], cfg.input_dims[1], cfg.input_dims[2]);
    let to_examples = |items: Vec<(crate::imaging::Thermogram, usize)>| -> Result<Vec<Example>> {
        items
            .into_iter()
            .map(|(t, c)| {
                Ok(Example {
                    input: replicate_channels(&image_tensor(&normalize(&t)), cfg.input_dims[0])?,
                    label: c,
                })
            })
            .collect()
    };
    let train = to_examples(pretext_generate(per_class, (h, w), seed::mix(seed, 1))?)?;
    let val = to_examples(pretext_generate((per_class / 5).max(1), (h, w), seed::mix(seed, 2))?)?;
    let spec = FitSpec {
        epochs,
        batch_size: 16,
        learn_rate,
        seed,
        loss: LossConfig {
            lambda: 0.0,
            beta: 0.0,
            ..LossConfig::default()
        },
    };
    let mut log = RunLog::new("pretext", format!("per_class={per_class} epochs={epochs} learn_rate={learn_rate} seed={seed}"));
    fit(&mut source, &train, &val, &spec, None, &mut log)?;
    Ok((source, log))
}
