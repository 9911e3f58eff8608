use etnet::network::{build_network, FusionMode, NetworkConfig, Variant};
use etnet_tensor::{Shape, Tensor};
use proptest::prelude::*;

fn configs() -> impl Strategy<Value = NetworkConfig> {
    (
        (1usize..=3, 2usize..=4, 2usize..=6),
        (2usize..=8, [1usize..=2, 1..=2, 1..=2, 1..=2]),
        (prop::sample::select(vec![1usize, 2, 4]), 1usize..=3, 1usize..=6, 1usize..=3),
        (any::<bool>(), any::<bool>(), any::<bool>()),
    )
        .prop_map(|((input_channels, num_classes, stem_width), (base, blocks), (r, dm, e, dil), (egm, wam, add))| NetworkConfig {
            input_channels,
            num_classes,
            stem_width,
            block_widths: [base, base * 2, base * 3, base * 4],
            blocks_per_stage: blocks,
            decoder_channels: r * dm,
            edge_channels: e,
            attention_reduction: r,
            use_egm: egm,
            use_wam: wam,
            dilation_stage4: dil,
            fusion: if add { FusionMode::Add } else { FusionMode::Concat },
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn output_shapes_follow_the_input(cfg in configs(), k in 1usize..=4, n in 1usize..=2, seed in any::<u64>()) {
        let size = 16 * k;
        let net = build_network(&cfg, seed).unwrap();
        let x = Tensor::from_fn(Shape::new(n, cfg.input_channels, size, size), |i| ((i * 37 % 101) as f32) / 50.0 - 1.0);
        let f = net.encode(&x).unwrap();
        prop_assert_eq!(f.iter().map(|m| m.stride).collect::<Vec<_>>(), vec![4, 8, 16, 16]);
        for (m, &w) in f.iter().zip(&cfg.block_widths) {
            prop_assert_eq!((m.values.shape().n, m.channels(), m.height()), (n, w, size / m.stride));
        }
        let out = net.forward(&x).unwrap();
        prop_assert_eq!(out.seg_logits.shape(), Shape::new(n, cfg.num_classes, size, size));
        prop_assert!(out.seg_logits.is_finite());
        prop_assert_eq!(out.edge_logits.map(|e| e.shape()), cfg.use_egm.then(|| Shape::new(n, 2, size, size)));
    }

    #[test]
    fn parameter_count_only_depends_on_the_config(cfg in configs(), a in any::<u64>(), b in any::<u64>()) {
        let x = build_network(&cfg, a).unwrap();
        let y = build_network(&cfg, b).unwrap();
        prop_assert_eq!(x.param_count(), cfg.param_count());
        prop_assert_eq!(x.param_count(), y.param_count());
    }
}

#[test]
fn variants_differ_only_in_module_parameters() {
    let base = build_network(&Variant::Base.apply(&NetworkConfig::toy(3)), 1).unwrap();
    let full = build_network(&Variant::Full.apply(&NetworkConfig::toy(3)), 1).unwrap();
    for name in base.params().names() {
        let id = full.params().id(name).expect("base parameter exists in the full network");
        assert_eq!(full.params().value(id), base.params().value(base.params().id(name).unwrap()), "{name}");
    }
    let extra: Vec<&str> = full.params().names().filter(|n| !base.params().contains(n)).collect();
    assert!(extra.iter().all(|n| n.starts_with("egm.") || n.starts_with("wam") || n.starts_with("head.guidance")), "{extra:?}");
}
