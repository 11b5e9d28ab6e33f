//! Preprocessing, noise and cohort properties.

mod common;

use mtlforge::data::{
    depth_value, extrude_depth, inject_noise, label_histogram, measured_snr, preprocess, NoiseSpec, SnrLabel,
};
use mtlforge::data::{DataSpec, Dataset, MnistSource};
use mtlforge::nn::ClassWeights;
use mtlforge::rng::ShiftRng;
use mtlforge::tensor::Tensor;
use proptest::prelude::*;

fn snr_labels() -> impl Strategy<Value = SnrLabel> {
    prop_oneof![
        Just(SnrLabel::Inf),
        (1..=9u32, 1..=40u32).prop_map(|(signal, noise)| SnrLabel::Ratio { signal, noise }),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn noise_stays_in_unit_interval_and_near_the_mix(
        label in snr_labels(), seed in any::<u64>(), pixels in prop::collection::vec(0.0f64..=1.0, 1..200),
    ) {
        let x = Tensor::from_vec(pixels);
        let spec = label.noise_spec(seed);
        let y = inject_noise(&x, &spec);
        let a = spec.alpha();
        prop_assert_eq!(y.shape(), x.shape());
        for (&xi, &yi) in x.data().iter().zip(y.data()) {
            prop_assert!((0.0..=1.0).contains(&yi));
            // α·x ≤ y ≤ α·x + (1−α)
            prop_assert!(yi >= a * xi - 1e-12 && yi <= a * xi + (1.0 - a) + 1e-12);
        }
        if label == SnrLabel::Inf {
            prop_assert!(y.bit_eq(&x));
        }
        prop_assert!(inject_noise(&x, &spec).bit_eq(&y));
    }

    #[test]
    fn snr_labels_round_trip(label in snr_labels()) {
        let text = label.to_string();
        prop_assert_eq!(text.parse::<SnrLabel>().unwrap(), label);
    }

    #[test]
    fn preprocess_is_binary_and_extrusion_follows_the_mask(
        raw in prop::collection::vec(any::<u8>(), 784), label in 0u8..10, size in prop::sample::select(vec![28usize, 32, 56, 64]),
    ) {
        let img = preprocess(&raw, 28, 28, size).unwrap();
        prop_assert_eq!(img.shape(), &[1, size, size][..]);
        prop_assert!(img.data().iter().all(|&v| v == 0.0 || v == 1.0));
        let lit = raw.iter().filter(|&&b| b as f64 / 255.0 >= 0.5).count();
        if size == 28 {
            prop_assert_eq!(img.data().iter().filter(|&&v| v == 1.0).count(), lit);
        }
        let depth = extrude_depth(&img, label);
        for (&m, &d) in img.data().iter().zip(depth.data()) {
            prop_assert_eq!(d, if m == 1.0 { depth_value(label) } else { 0.0 });
        }
    }
}

#[test]
fn mixing_weight_is_recovered_by_least_squares() {
    let mut rng = ShiftRng::new(9);
    let clean: Vec<f64> = (0..20_000).map(|_| if rng.below(4) == 0 { 1.0 } else { 0.0 }).collect();
    let x = Tensor::from_vec(clean.clone());
    for (s, n) in [(1u32, 5u32), (1, 19), (1, 29)] {
        let spec = NoiseSpec {
            signal_parts: s as f64,
            noise_parts: n as f64,
            seed: 77,
        };
        let est = measured_snr(&clean, inject_noise(&x, &spec).data()).unwrap();
        let alpha = s as f64 / (s + n) as f64;
        assert!((est.alpha - alpha).abs() <= 0.01, "{s}:{n}: {} vs {alpha}", est.alpha);
    }
}

#[test]
fn regenerated_cohorts_are_identical_and_overlap_free() {
    let src = common::synthetic_source();
    let spec = DataSpec {
        size: 32,
        train_n: 64,
        snr: SnrLabel::Ratio { signal: 1, noise: 19 },
        seed: 4,
    };
    let a = Dataset::generate(spec, &src).unwrap();
    let b = Dataset::generate(spec, &src).unwrap();
    assert_eq!(a, b);
    let train: Vec<u32> = a.train.iter().map(|s| s.index).collect();
    let val: Vec<u32> = a.val.iter().map(|s| s.index).collect();
    assert_eq!(train, (0..64).collect::<Vec<_>>());
    assert_eq!(val, (45_000..46_500).collect::<Vec<_>>());
    assert_eq!(a.test.len(), 1000);
    // A sample's noise does not depend on the cohort size it was drawn with.
    let small = Dataset::generate(DataSpec { train_n: 8, ..spec }, &src).unwrap();
    assert_eq!(small.train[..], a.train[..8]);
    assert_eq!(small.val, a.val);
}

#[test]
fn missing_idx_files_explain_where_to_get_them() {
    let dir = tempfile::tempdir().unwrap();
    let err = MnistSource::load(dir.path()).unwrap_err().to_string();
    assert!(err.contains("train-images-idx3-ubyte") && err.contains("MTLFORGE_DATA"), "{err}");
}

#[test]
fn mnist_class_weights_are_near_uniform() {
    let Some(dir) = common::mnist_dir() else {
        eprintln!("MNIST not found; skipping");
        return;
    };
    let src = MnistSource::load(&dir).unwrap();
    let spec = DataSpec {
        size: 28,
        train_n: 5000,
        snr: SnrLabel::Inf,
        seed: 0,
    };
    let ds = Dataset::generate(spec, &src).unwrap();
    let hist = label_histogram(&ds.train);
    // Counted directly from the raw label file, independently of the loader.
    assert_eq!(hist, [479, 563, 488, 493, 535, 434, 501, 550, 462, 495]);
    let w = ClassWeights::from_counts(&hist).unwrap();
    for (&x, &n) in w.as_slice().iter().zip(&hist) {
        assert_eq!(x, 5000.0 / (10.0 * n as f64));
    }
    // Nearly balanced: every weight within 16% of one.
    assert!(w.as_slice().iter().all(|x| (0.88..=1.16).contains(x)), "{:?}", w.as_slice());
}
