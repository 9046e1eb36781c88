use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use reqnn::certify::{self, random_cloud, GradScope};
use reqnn::geometry::PointCloud;
use reqnn::network::{
    chamfer_loss, count_complexity, preset, train, LayerSpec, Network, NetworkOutput, NetworkSpec, ReluKind, Scale,
    TrainConfig, Variant, PRESETS,
};
use reqnn::{random_rotor, rotate_tensor, Error};

fn toy_spec() -> NetworkSpec {
    NetworkSpec {
        name: "toy".into(),
        seed: 3,
        num_points: 10,
        layers: vec![
            LayerSpec::Conv { out_channels: 4, bias: false },
            LayerSpec::Relu { mode: ReluKind::default() },
            LayerSpec::Conv { out_channels: 2, bias: false },
        ],
        bottleneck: None,
        fps_seed: Default::default(),
        ball_query: Default::default(),
    }
}

#[test]
fn same_seed_gives_identical_parameters() {
    for name in PRESETS {
        let a = Network::build(preset(name, Scale::Micro).unwrap()).unwrap();
        let b = Network::build(preset(name, Scale::Micro).unwrap()).unwrap();
        assert_eq!(a.params(), b.params());
        assert!(a.num_params() <= 50_000, "{name} has {} parameters", a.num_params());
        let tiny = Network::build(preset(name, Scale::Tiny).unwrap()).unwrap();
        assert!(tiny.num_params() <= 500, "{name} tiny has {} parameters", tiny.num_params());
    }
    let spec = preset("micro-pointnet-cls", Scale::Micro).unwrap();
    assert_eq!(spec.layers.len(), 16);
}

#[test]
fn invalid_wiring_names_the_layer() {
    let mut spec = toy_spec();
    spec.layers.insert(1, LayerSpec::Bridge { kind: Default::default() });
    match Network::build(spec) {
        Err(Error::InvalidSpec { layer, .. }) => assert_eq!(layer, 2),
        other => panic!("expected InvalidSpec, got {other:?}"),
    }
    let mut spec = toy_spec();
    spec.layers.push(LayerSpec::Linear { out_features: 3 });
    assert!(matches!(Network::build(spec), Err(Error::InvalidSpec { layer: 3, .. })));
    let mut spec = toy_spec();
    spec.layers.push(LayerSpec::PoolNeighbors);
    assert!(Network::build(spec).is_err());
}

#[test]
fn spec_json_roundtrip() {
    for name in PRESETS {
        let spec = preset(name, Scale::Micro).unwrap();
        assert_eq!(NetworkSpec::from_json(&spec.to_json()).unwrap(), spec);
    }
    let text = r#"{"name":"x","num_points":8,"layers":[{"op":"conv","out_channels":2},{"op":"relu"},{"op":"global_pool"}]}"#;
    let spec = NetworkSpec::from_json(text).unwrap();
    assert_eq!(spec.layers[1], LayerSpec::Relu { mode: ReluKind::Constant { c: 1.0 } });
}

#[test]
fn wrong_input_size_is_rejected() {
    let net = Network::build(toy_spec()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    assert!(matches!(net.forward(&random_cloud(&mut rng, 9)), Err(Error::ShapeMismatch { .. })));
}

#[test]
fn empty_network_returns_its_input() {
    let spec = NetworkSpec {
        layers: vec![],
        ..toy_spec()
    };
    let net = Network::build(spec.clone()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let cloud = random_cloud(&mut rng, 10);
    assert_eq!(net.forward(&cloud).unwrap(), NetworkOutput::Cloud(cloud.points().clone()));
    let c = count_complexity(&spec, 10).unwrap();
    assert_eq!((c.equivariant.param_count, c.equivariant.flop_count), (0, 0));
    assert_eq!((c.twin.param_count, c.twin.flop_count), (0, 0));
}

#[test]
fn tape_contract() {
    let mut net = Network::build(toy_spec()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let cloud = random_cloud(&mut rng, 10);
    let out = net.forward(&cloud).unwrap();
    assert!(matches!(net.backward(&out), Err(Error::Tape(_))));
    let out = net.forward_train(&cloud, None).unwrap();
    let zero = match &out {
        NetworkOutput::Cloud(q) => NetworkOutput::Cloud(q.scale(0.0)),
        NetworkOutput::Logits(z) => NetworkOutput::Logits(z.map(|_| 0.0)),
    };
    net.backward(&zero).unwrap();
    assert!(net.grads().iter().all(|g| g.data().iter().all(|&v| v == 0.0)));
    assert!(matches!(net.backward(&zero), Err(Error::Tape(_))));
}

#[test]
fn forward_is_deterministic_and_logits_are_invariant() {
    let net = Network::build(preset("micro-pointnet-cls", Scale::Micro).unwrap()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let cloud = random_cloud(&mut rng, 64);
    let a = net.forward(&cloud).unwrap();
    assert_eq!(a, net.forward(&cloud).unwrap());
    let r = random_rotor(&mut rng);
    let b = net.forward(&cloud.rotated(&r)).unwrap();
    for (x, y) in a.logits().unwrap().iter().zip(b.logits().unwrap()) {
        assert!((x - y).abs() / (1.0 + x.abs()) <= 1e-9);
    }
}

#[test]
fn autoencoder_output_co_rotates() {
    let net = Network::build(preset("micro-pointnet-ae", Scale::Micro).unwrap()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let cloud = random_cloud(&mut rng, 64);
    let r = random_rotor(&mut rng);
    let direct = net.forward(&cloud.rotated(&r)).unwrap();
    let rotated = rotate_tensor(&r, net.forward(&cloud).unwrap().cloud().unwrap());
    assert!(direct.cloud().unwrap().max_relative_error(&rotated).unwrap() <= 1e-9);
    assert!(direct.cloud().unwrap().is_pure());

    let z = net.encode(&cloud).unwrap();
    let synth = net.decode(&rotate_tensor(&r, &z)).unwrap();
    assert!(synth.cloud().unwrap().max_relative_error(&rotated).unwrap() <= 1e-9);
}

#[test]
fn chamfer_examples_and_gradient() {
    let a = PointCloud::from_points(&[[0.0, 0.0, 0.0]]);
    let b = PointCloud::from_points(&[[1.0, 0.0, 0.0]]);
    assert_eq!(chamfer_loss(&a, &a).unwrap().0, 0.0);
    assert_eq!(chamfer_loss(&a, &b).unwrap().0, 1.0);
    assert!(chamfer_loss(&a, &PointCloud::from_points(&[])).is_err());

    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let p = random_cloud(&mut rng, 12);
    let t = random_cloud(&mut rng, 9);
    let (_, grad) = chamfer_loss(&p, &t).unwrap();
    let h = 1e-6;
    for i in 0..12 {
        for k in 0..3 {
            let shift = |d: f64| {
                let mut pts = p.coords();
                pts[i][k] += d;
                chamfer_loss(&PointCloud::from_points(&pts), &t).unwrap().0
            };
            let numeric = (shift(h) - shift(-h)) / (2.0 * h);
            let rel = (numeric - grad[i][k]).abs() / (numeric.abs() + grad[i][k].abs() + 1e-12);
            assert!(rel <= 1e-4, "point {i} axis {k}: {numeric} vs {}", grad[i][k]);
        }
    }
}

fn labeled(rng: &mut ChaCha8Rng, n: usize, label: usize) -> PointCloud {
    let pts: Vec<[f64; 3]> = (0..n)
        .map(|_| {
            let s = 1.0 + label as f64;
            [rng.random_range(-s..s), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]
        })
        .collect();
    PointCloud::from_points(&pts).with_label(label)
}

#[test]
fn one_sample_epoch_decreases_its_loss() {
    let mut net = Network::build(preset("micro-pointnet-cls", Scale::Micro).unwrap()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let data = vec![labeled(&mut rng, 64, 1)];
    let cfg = TrainConfig {
        epochs: 1,
        ..TrainConfig::default()
    };
    let before = net.sample_gradient(&data[0], reqnn::network::Target::Label(1), None).unwrap().loss;
    train(&mut net, &data, &cfg).unwrap();
    let after = net.sample_gradient(&data[0], reqnn::network::Target::Label(1), None).unwrap().loss;
    assert!(after < before, "{after} !< {before}");
    assert!(train(&mut net, &[], &cfg).is_err());
}

#[test]
fn training_is_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let data: Vec<PointCloud> = (0..20).map(|i| labeled(&mut rng, 64, i % 3)).collect();
    let cfg = TrainConfig {
        epochs: 2,
        batch_size: 4,
        seed: 9,
        ..TrainConfig::default()
    };
    let run = || {
        let mut net = Network::build(preset("micro-pointnet-cls", Scale::Micro).unwrap()).unwrap();
        let log = train(&mut net, &data, &cfg).unwrap();
        (log, net.params().to_vec())
    };
    assert_eq!(run(), run());
}

#[test]
fn tiny_presets_pass_gradcheck() {
    for name in PRESETS {
        for variant in [Variant::Equivariant, Variant::Twin] {
            let net = Network::build_variant(preset(name, Scale::Tiny).unwrap(), variant).unwrap();
            let report = certify::gradcheck(&net, 1e-4, 1e-4, 0, GradScope::All).unwrap();
            assert!(report.passed(), "{variant:?} {} {:#?}", report.summary(), report.failures);
        }
    }
}

#[test]
fn complexity_counts_match_instantiated_parameters() {
    for name in PRESETS {
        let spec = preset(name, Scale::Micro).unwrap();
        let c = count_complexity(&spec, spec.num_points).unwrap();
        assert_eq!(c.equivariant.param_count as usize, Network::build(spec.clone()).unwrap().num_params());
        assert_eq!(c.twin.param_count as usize, Network::build_variant(spec, Variant::Twin).unwrap().num_params());
        assert!(c.equivariant.param_count <= c.twin.param_count);
        assert!(c.flop_ratio() < 3.0, "{name}: {}", c.flop_ratio());
    }
}

#[test]
fn pointwise_encoder_bottleneck_has_a_single_direction() {
    let mut spec = preset("micro-pointnet-ae", Scale::Micro).unwrap();
    spec.layers.retain(|l| !matches!(l, LayerSpec::EdgeFeatures { .. } | LayerSpec::PoolNeighbors));
    spec.bottleneck = spec.layers.iter().position(|l| *l == LayerSpec::GlobalPool);
    let net = Network::build(spec).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let z = net.encode(&random_cloud(&mut rng, 64)).unwrap().to_points();
    let unit = |p: &[f64; 3]| {
        let n = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
        p.map(|v| v / n)
    };
    let min_abs_cos = |z: &[[f64; 3]]| {
        let d0 = unit(&z[0]);
        z.iter()
            .map(|p| {
                let d = unit(p);
                (d[0] * d0[0] + d[1] * d0[1] + d[2] * d0[2]).abs()
            })
            .fold(1.0f64, f64::min)
    };
    assert!((min_abs_cos(&z) - 1.0).abs() <= 1e-9);

    let edge = Network::build(preset("micro-pointnet-ae", Scale::Micro).unwrap()).unwrap();
    let z = edge.encode(&random_cloud(&mut rng, 64)).unwrap().to_points();
    assert!(min_abs_cos(&z) < 0.99);
}
