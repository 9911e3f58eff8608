use etnet_tensor::{Conv2dGeom, Graph, Shape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

fn random(shape: Shape, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

fn toy(egm: bool, wam: bool) -> Network {
    let cfg = NetworkConfig {
        use_egm: egm,
        use_wam: wam,
        ..NetworkConfig::toy(3)
    };
    build_network(&cfg, 7).unwrap()
}

fn dims(t: &Tensor) -> [usize; 4] {
    t.shape().dims()
}

#[test]
fn builds_are_deterministic() {
    let cfg = NetworkConfig::toy(3);
    let a = build_network(&cfg, 7).unwrap();
    let b = build_network(&cfg, 7).unwrap();
    assert_eq!(a.params(), b.params());
    let c = build_network(&cfg, 8).unwrap();
    assert_ne!(a.params().get("stem.conv.weight"), c.params().get("stem.conv.weight"));
}

#[test]
fn modules_add_parameters() {
    let full = toy(true, true).param_count();
    let no_egm = toy(false, true).param_count();
    let no_wam = toy(true, false).param_count();
    let base = toy(false, false).param_count();
    assert!(no_egm < full && no_wam < full);
    assert!(base < no_egm && base < no_wam);
    assert_eq!(full, NetworkConfig::toy(3).param_count());
}

#[test]
fn full_scale_encoder_matches_fifty_layer_recipe() {
    let cfg = NetworkConfig::full_scale(3);
    let specs = encoder_specs(&cfg);
    let convs = specs
        .iter()
        .filter(|s| s.name.ends_with(".weight") && !s.name.contains("proj"))
        .count();
    // Stem plus three convolutions in each of 3 + 4 + 6 + 3 bottlenecks.
    assert_eq!(convs, 1 + 3 * 16);
    assert_eq!(specs.iter().filter(|s| s.name.ends_with("proj.weight")).count(), 4);
    // Convolution and batch-norm weights of the standard 50-layer residual network without its classifier.
    let count: usize = specs.iter().map(|s| s.shape.numel()).sum();
    assert_eq!(count, 23_508_032);
    let w = |n: &str| specs.iter().find(|s| s.name == n).unwrap().shape.dims();
    assert_eq!(w("enc1.0.conv1.weight"), [64, 64, 1, 1]);
    assert_eq!(w("enc2.0.conv2.weight"), [128, 128, 3, 3]);
    assert_eq!(w("enc4.2.conv3.weight"), [2048, 512, 1, 1]);
}

#[test]
fn invalid_configs_are_rejected() {
    let bad = [
        NetworkConfig {
            attention_reduction: 3,
            ..NetworkConfig::toy(3)
        },
        NetworkConfig {
            block_widths: [32, 0, 128, 256],
            ..NetworkConfig::toy(3)
        },
        NetworkConfig {
            decoder_channels: 0,
            ..NetworkConfig::toy(3)
        },
        NetworkConfig::toy(1),
    ];
    for cfg in bad {
        assert!(build_network(&cfg, 0).is_err(), "{cfg:?}");
    }
}

#[test]
fn encoder_shapes_and_strides() {
    let net = toy(true, true);
    let f = net.encode(&random(Shape::new(1, 3, 128, 128), 1)).unwrap();
    let got: Vec<_> = f.iter().map(|m| (dims(&m.values), m.stride)).collect();
    assert_eq!(
        got,
        vec![
            ([1, 32, 32, 32], 4),
            ([1, 64, 16, 16], 8),
            ([1, 128, 8, 8], 16),
            ([1, 256, 8, 8], 16),
        ]
    );
}

#[test]
fn input_size_must_be_a_multiple_of_sixteen() {
    let net = toy(true, true);
    assert!(net.encode(&Tensor::zeros(Shape::new(1, 3, 40, 48))).is_err());
    assert!(net.forward(&Tensor::zeros(Shape::new(1, 3, 48, 40))).is_err());
    assert!(net.forward(&Tensor::zeros(Shape::new(1, 1, 32, 32))).is_err());
}

#[test]
fn zero_image_gives_finite_outputs() {
    let net = toy(true, true);
    let out = net.forward(&Tensor::zeros(Shape::new(1, 3, 32, 32))).unwrap();
    assert!(out.seg_logits.is_finite());
    assert!(out.edge_logits.unwrap().is_finite());
}

#[test]
fn dblock_shapes() {
    for fusion in [FusionMode::Concat, FusionMode::Add] {
        let cfg = NetworkConfig {
            fusion,
            ..NetworkConfig::toy(3)
        };
        let net = build_network(&cfg, 3).unwrap();
        let f4 = FeatureMap::new(random(Shape::new(1, 256, 8, 8), 1), 16);
        let f3 = FeatureMap::new(random(Shape::new(1, 128, 8, 8), 2), 16);
        let d1 = net.dblock(1, &f4, &f3).unwrap();
        assert_eq!((dims(&d1.values), d1.stride), ([1, 16, 8, 8], 16));
        let f2 = FeatureMap::new(random(Shape::new(1, 64, 16, 16), 3), 8);
        let d2 = net.dblock(2, &d1, &f2).unwrap();
        assert_eq!((dims(&d2.values), d2.stride), ([1, 16, 16, 16], 8));
        assert!(net.dblock(2, &f2, &d1).is_err());
    }
}

#[test]
fn edge_guidance_shapes_and_shared_trunk() {
    let mut net = toy(true, true);
    let f1 = FeatureMap::new(random(Shape::new(1, 32, 32, 32), 1), 4);
    let f2 = FeatureMap::new(random(Shape::new(1, 64, 16, 16), 2), 8);
    let (guide, edge) = net.edge_guidance(&f1, &f2).unwrap();
    assert_eq!(dims(&guide.values), [1, 16, 32, 32]);
    assert_eq!(dims(&edge.values), [1, 2, 32, 32]);
    assert!(net.edge_guidance(&f2, &f1).is_err());

    let zero1 = FeatureMap::new(Tensor::zeros(f1.values.shape()), 4);
    let zero2 = FeatureMap::new(Tensor::zeros(f2.values.shape()), 8);
    let (zg, ze) = net.edge_guidance(&zero1, &zero2).unwrap();
    assert!(zg.values.is_finite() && ze.values.is_finite());

    // The branches differ only in their last convolution.
    net.params_mut().get_mut("egm.edge.weight").unwrap().data_mut()[0] += 1.0;
    let (guide2, edge2) = net.edge_guidance(&f1, &f2).unwrap();
    assert_eq!(guide, guide2);
    assert_ne!(edge, edge2);
}

#[test]
fn weighted_block_scales_each_channel() {
    let mut net = toy(true, true);
    let x = FeatureMap::new(random(Shape::new(2, 16, 8, 8), 5), 16);
    let y = net.weighted_block(1, &x).unwrap();
    assert_eq!(y.values.shape(), x.values.shape());
    for n in 0..2 {
        for c in 0..16 {
            let (xs, ys) = (x.values.plane(n, c), y.values.plane(n, c));
            let k = ys[0] / xs[0];
            assert!(k > 0.0 && k < 1.0);
            for (a, b) in xs.iter().zip(ys) {
                assert!((b / a - k).abs() < 1e-5);
            }
        }
    }
    let zero = FeatureMap::new(Tensor::zeros(x.values.shape()), 16);
    assert_eq!(net.weighted_block(2, &zero).unwrap().values, zero.values);

    net.params_mut().get_mut("wam3.fc2.bias").unwrap().data_mut().fill(100.0);
    assert_eq!(net.weighted_block(3, &x).unwrap().values, x.values);

    let narrow = FeatureMap::new(random(Shape::new(1, 2, 4, 4), 1), 16);
    assert!(net.weighted_block(1, &narrow).is_err());
}

fn decoder_maps() -> [FeatureMap; 3] {
    [
        FeatureMap::new(random(Shape::new(1, 16, 8, 8), 1), 16),
        FeatureMap::new(random(Shape::new(1, 16, 16, 16), 2), 8),
        FeatureMap::new(random(Shape::new(1, 16, 32, 32), 3), 4),
    ]
}

#[test]
fn aggregate_shapes() {
    let d = decoder_maps();
    let guide = FeatureMap::new(random(Shape::new(1, 16, 32, 32), 4), 4);
    let full = toy(true, true);
    let out = full.aggregate([&d[0], &d[1], &d[2]], Some(&guide)).unwrap();
    assert_eq!(dims(&out.values), [1, 3, 32, 32]);
    let wam = toy(false, true);
    let out = wam.aggregate([&d[0], &d[1], &d[2]], None).unwrap();
    assert_eq!(dims(&out.values), [1, 3, 32, 32]);
    assert!(wam.aggregate([&d[0], &d[1], &d[2]], Some(&guide)).is_err());
    assert!(full.aggregate([&d[1], &d[0], &d[2]], None).is_err());
}

#[test]
fn saturated_attention_matches_the_unweighted_pathway() {
    let d = decoder_maps();
    let refs = [&d[0], &d[1], &d[2]];
    let mut weighted = toy(false, true);
    for i in 1..=3 {
        weighted
            .params_mut()
            .get_mut(&format!("wam{i}.fc2.bias"))
            .unwrap()
            .data_mut()
            .fill(100.0);
    }
    let plain = toy(false, false);
    assert_eq!(
        weighted.aggregate(refs, None).unwrap(),
        plain.aggregate(refs, None).unwrap()
    );
}

#[test]
fn forward_shapes_and_purity() {
    let net = toy(true, true);
    let x = random(Shape::new(1, 3, 64, 64), 9);
    let a = net.forward(&x).unwrap();
    assert_eq!(dims(&a.seg_logits), [1, 3, 64, 64]);
    assert_eq!(dims(a.edge_logits.as_ref().unwrap()), [1, 2, 64, 64]);
    assert_eq!(a, net.forward(&x).unwrap());

    let base = toy(false, false).forward(&x).unwrap();
    assert!(base.edge_logits.is_none());
    assert_eq!(dims(&base.seg_logits), [1, 3, 64, 64]);
}

#[test]
fn ablation_parameter_sets_are_nested() {
    let nets: Vec<(Variant, Network)> = Variant::ALL
        .iter()
        .map(|&v| (v, build_network(&v.apply(&NetworkConfig::toy(3)), 11).unwrap()))
        .collect();
    let subset = |small: &Network, large: &Network| {
        small
            .params()
            .iter()
            .all(|(name, value)| large.params().get(name) == Some(value))
    };
    let get = |v: Variant| &nets.iter().find(|(w, _)| *w == v).unwrap().1;
    assert!(subset(get(Variant::Base), get(Variant::Egm)));
    assert!(subset(get(Variant::Base), get(Variant::Wam)));
    assert!(subset(get(Variant::Egm), get(Variant::Full)));
    assert!(subset(get(Variant::Wam), get(Variant::Full)));
    assert!(!subset(get(Variant::Egm), get(Variant::Wam)));
}

fn zero_branch(net: &mut Network, block: &str) {
    for part in ["conv1.weight", "bn1.gamma", "bn1.beta", "conv2.weight", "bn2.gamma", "bn2.beta", "conv3.weight", "bn3.gamma", "bn3.beta"] {
        net.params_mut()
            .get_mut(&format!("{block}.{part}"))
            .unwrap()
            .data_mut()
            .fill(0.0);
    }
}

#[test]
fn residual_unit_with_zeroed_branch_is_its_shortcut() {
    let mut net = toy(true, true);
    zero_branch(&mut net, "enc1.1");
    zero_branch(&mut net, "enc2.0");

    let x = random(Shape::new(2, 32, 8, 8), 4).map(f32::abs);
    let mut g = Graph::new(false);
    let xv = g.input(x.clone());
    let y = forward::Builder::new(&net, &mut g).bottleneck(xv, "enc1.1", 1, 1).unwrap();
    assert_eq!(g.value(y), &x);

    // Projected shortcut: the unit reduces to ReLU(BN(1×1 strided projection)).
    let mut g = Graph::new(false);
    let xv = g.input(x);
    let mut b = forward::Builder::new(&net, &mut g);
    let y = b.bottleneck(xv, "enc2.0", 2, 1).unwrap();
    let p = b.conv_bn(xv, "enc2.0.proj", "enc2.0.proj_bn", Conv2dGeom::default().with_stride(2), true).unwrap();
    assert_eq!(dims(g.value(y)), [2, 64, 4, 4]);
    assert_eq!(g.value(y), g.value(p));
}

#[test]
fn running_stats_follow_momentum() {
    let mut net = toy(false, false);
    let stats = BatchStats {
        mean: vec![1.0; 8],
        var: vec![3.0; 8],
    };
    net.update_running_stats(&[("stem.bn".into(), stats)], 0.1).unwrap();
    let r = &net.running_stats()["stem.bn"];
    assert!((r.mean[0] - 0.1).abs() < 1e-7);
    assert!((r.var[0] - 1.2).abs() < 1e-6);
    assert!(net
        .update_running_stats(&[("nope".into(), BatchStats { mean: vec![], var: vec![] })], 0.1)
        .is_err());
}

#[test]
fn argmax_prefers_the_first_maximum() {
    let t = Tensor::from_vec(Shape::new(1, 3, 1, 2), vec![1.0, 0.0, 1.0, 2.0, 0.5, 2.0]).unwrap();
    assert_eq!(argmax_channels(&t), vec![vec![0, 1]]);
}

#[test]
fn variant_names_round_trip() {
    for v in Variant::ALL {
        assert_eq!(v.as_str().parse::<Variant>().unwrap(), v);
        assert_eq!(NetworkConfig::toy(3).variant(), Variant::Full);
        assert_eq!(v.apply(&NetworkConfig::toy(3)).variant(), v);
    }
    assert!("resnet".parse::<Variant>().is_err());
}
