use thermobreath::autodiff::{Tape, Tensor};
use thermobreath::network::{
    adapt_features, build_source, build_target, build_target_with, image_tensor, mcfe_extract, replicate_channels,
    set_trainable, AdaptationMap, Group, LayerMap, MapKind, ModelConfig, Network,
};
use thermobreath::imaging::{Scale, Thermogram};

fn zero_biases(params: &mut thermobreath::network::ModelParams) {
    for i in 0..params.len() {
        if params.name(i).ends_with(".bias") {
            params.tensor_mut(i).data_mut().fill(0.0);
        }
    }
}

fn probe(seed: u64) -> Thermogram {
    let px = (0..64 * 64).map(|i| ((i as u64 * 2654435761 + seed) % 256) as f64).collect();
    Thermogram::new(64, 64, px, Scale::Byte).unwrap()
}

#[test]
fn mini_source_is_deterministic() {
    let cfg = ModelConfig::mini();
    let a = build_source(&cfg, 7).unwrap();
    let b = build_source(&cfg, 7).unwrap();
    let c = build_source(&cfg, 8).unwrap();
    assert_eq!(a.params(), b.params());
    assert_ne!(a.params().checksum(|_| true), c.params().checksum(|_| true));
}

#[test]
fn mini_embedding_and_logits() {
    let source = build_source(&ModelConfig::mini(), 1).unwrap();
    let target = build_target(&source).unwrap();
    let img = probe(3);
    let e = mcfe_extract(&target, &img).unwrap();
    assert_eq!(e.shape(), &[240]);
    assert_eq!(mcfe_extract(&target, &img).unwrap(), e);
    assert_eq!(target.forward_image(&img).unwrap().logits.shape(), &[2]);
    let wrong = Thermogram::filled(32, 32, 0.0, Scale::Byte).unwrap();
    assert!(mcfe_extract(&target, &wrong).is_err());
}

#[test]
fn zero_input_gives_uniform_prediction() {
    let source = build_source(&ModelConfig::mini(), 2).unwrap();
    let mut target = build_target(&source).unwrap();
    zero_biases(target.params_mut());
    let img = Thermogram::filled(64, 64, 0.0, Scale::Byte).unwrap();
    let out = target.forward_image(&img).unwrap();
    assert_eq!(out.logits.data(), &[0.0, 0.0]);
    assert!(out.embedding.data().iter().all(|&v| v == 0.0));
    let p = thermobreath::objectives::cross_entropy(&out.logits, 0).unwrap();
    assert!((p - std::f64::consts::LN_2).abs() < 1e-12);
}

#[test]
fn identity_adaptation_reproduces_source_features() {
    let source = build_source(&ModelConfig::mini(), 4).unwrap();
    let target = build_target(&source).unwrap();
    for (name, t, g) in source.params().iter() {
        if matches!(g, Group::Conv1 | Group::Stage(_)) {
            assert_eq!(target.params().get(name).unwrap(), t, "{name}");
        }
    }
    let x = image_tensor(&probe(9));
    let src = source.prefix(&replicate_channels(&x, 3).unwrap(), source.steps()).unwrap();
    let tgt = target.prefix(&x, target.steps()).unwrap();
    assert_eq!(src.pooled.len(), tgt.pooled.len());
    for (a, b) in src.value.data().iter().zip(tgt.value.data()) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn adaptation_map_applies_per_layer() {
    let source = build_source(&ModelConfig::mini(), 5).unwrap();
    let mut map = AdaptationMap::identity(&source, MapKind::Scalar);
    let first = map.names()[0].clone();
    *map.layer_at_mut(0) = LayerMap {
        linear: Tensor::scalar(2.0),
        offset: Tensor::scalar(0.0),
    };
    let adapted = adapt_features(&source, &map).unwrap();
    let src = source.params().get(&first).unwrap();
    let (_, out) = adapted.iter().find(|(n, _)| *n == first).unwrap();
    for (a, b) in src.data().iter().zip(out.data()) {
        assert_eq!(*b, 2.0 * a);
    }
    let target = build_target_with(&source, &map, 0).unwrap();
    assert_eq!(target.params().get(&first).unwrap(), out);

    let bad = AdaptationMap::from_layers(vec![(
        "conv1.bias".into(),
        LayerMap::identity(MapKind::Dense, 3),
    )]);
    let err = adapt_features(&source, &bad).unwrap_err();
    assert!(err.to_string().contains("conv1.bias"));
}

fn grad_presence(top_l: usize) -> Vec<(Group, bool)> {
    let source = build_source(&ModelConfig::mini(), 6).unwrap();
    let target = set_trainable(build_target(&source).unwrap(), top_l).unwrap();
    let x = image_tensor(&probe(1));
    let act = target.prefix(&x, 0).unwrap();
    let mut tape = Tape::new();
    let bound = target.bind(&mut tape, 0);
    let out = target.forward_from(&mut tape, &bound, &act, true, 3).unwrap();
    let loss = tape.cross_entropy(out.logits, 1).unwrap();
    let grads = tape.backward(loss).unwrap();
    (0..target.params().len())
        .map(|i| (target.params().group(i), grads.get(bound.get(i).unwrap()).is_some()))
        .collect()
}

#[test]
fn freeze_schedule_controls_gradients() {
    for (g, has) in grad_presence(0) {
        assert_eq!(has, g == Group::Head, "{g:?}");
    }
    for (g, has) in grad_presence(1) {
        assert_eq!(has, matches!(g, Group::Head | Group::Stage(4)), "{g:?}");
    }
    assert!(grad_presence(6).iter().all(|(_, has)| *has));
    let source = build_source(&ModelConfig::mini(), 6).unwrap();
    assert!(set_trainable(build_target(&source).unwrap(), 7).is_err());
}

#[test]
fn checkpoint_round_trip_restores_predictions() {
    let source = build_source(&ModelConfig::mini(), 11).unwrap();
    let target = set_trainable(build_target(&source).unwrap(), 2).unwrap();
    let bytes = target.to_checkpoint().to_bytes();
    let ckpt = thermobreath::autodiff::Checkpoint::from_bytes(&bytes).unwrap();
    let back = thermobreath::network::TargetModel::from_checkpoint(&ckpt).unwrap();
    assert_eq!(back.params(), target.params());
    assert_eq!(back.top_l(), 2);
    let img = probe(4);
    assert_eq!(back.forward_image(&img).unwrap(), target.forward_image(&img).unwrap());
}

#[test]
fn inconsistent_config_is_rejected() {
    let mut cfg = ModelConfig::mini();
    cfg.blocks_per_stage = vec![1, 1];
    assert!(matches!(build_source(&cfg, 0), Err(thermobreath::Error::Config(_))));
}
