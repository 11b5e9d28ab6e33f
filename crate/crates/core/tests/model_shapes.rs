//! Output-shape contract over a sweep of configurations.

mod common;

use mtlforge::model::{MultitaskNet, UNetConfig};
use mtlforge::rng::ShiftRng;
use proptest::prelude::*;

fn configs() -> impl Strategy<Value = UNetConfig> {
    (
        prop::sample::select(vec![2usize, 3, 4]),
        prop::sample::select(vec![4usize, 8]),
        prop::sample::select(vec![16usize, 32, 64]),
        1..=16usize,
        any::<bool>(),
    )
        .prop_map(|(levels, base_channels, input_size, cls_hidden, upsample_conv)| UNetConfig {
            levels,
            base_channels,
            input_size,
            num_classes: 10,
            cls_hidden,
            upsample_conv,
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn forward_shapes_follow_the_config(cfg in configs(), batch in 1..=2usize, seed in any::<u64>()) {
        let net = MultitaskNet::build(cfg, seed).unwrap();
        let mut rng = ShiftRng::new(seed);
        let s = cfg.input_size;
        let x = common::random_tensor(&mut rng, &[batch, 1, s, s]);
        let out = net.forward(&x).unwrap();
        prop_assert_eq!(out.depth.shape(), &[batch, 1, s, s][..]);
        prop_assert_eq!(out.logits.shape(), &[batch, 10][..]);
        let bottleneck = cfg.base_channels << (cfg.levels - 1);
        prop_assert_eq!(out.features.shape(), &[batch, bottleneck][..]);
        prop_assert!(out.depth.all_finite() && out.logits.all_finite());
        let features = net.classification_bottleneck_features(&x).unwrap();
        prop_assert!(features.bit_eq(&out.features));
    }

    #[test]
    fn parameter_count_does_not_depend_on_input_size(cfg in configs(), seed in any::<u64>()) {
        let a = MultitaskNet::build(cfg, seed).unwrap();
        let b = MultitaskNet::build(UNetConfig { input_size: 128, ..cfg }, seed ^ 1).unwrap();
        prop_assert_eq!(a.num_weights(), b.num_weights());
        let shapes = |n: &MultitaskNet| n.parameters().iter().map(|p| p.value.shape().to_vec()).collect::<Vec<_>>();
        prop_assert_eq!(shapes(&a), shapes(&b));
    }
}

#[test]
fn wrong_input_size_is_rejected() {
    let net = MultitaskNet::build(UNetConfig { input_size: 32, ..UNetConfig::default() }, 0).unwrap();
    let mut rng = ShiftRng::new(0);
    assert!(net.forward(&common::random_tensor(&mut rng, &[1, 1, 16, 16])).is_err());
    assert!(net.forward(&common::random_tensor(&mut rng, &[1, 2, 32, 32])).is_err());
}

#[test]
fn invalid_configs_are_rejected() {
    let base = UNetConfig::default();
    for bad in [
        UNetConfig { levels: 1, ..base },
        UNetConfig { base_channels: 2, ..base },
        UNetConfig { input_size: 24, ..base },
        UNetConfig { input_size: 16, levels: 5, ..base },
        UNetConfig { input_size: 8, levels: 2, ..base },
    ] {
        assert!(MultitaskNet::build(bad, 0).is_err(), "{bad:?}");
    }
}
