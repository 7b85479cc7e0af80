//! Attention-gated ensemble with a learnable softmax fuzziness.

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use weightmix_core::agelfs::*;
use weightmix_core::init::cold_init;
use weightmix_core::nn::{softmax, LayerSpec, NetworkSpec, TrainConfig};
use weightmix_core::{Dataset, TensorF, WeightSet};

proptest! {
    #[test]
    fn fuzzy_softmax_is_normalized_and_shift_invariant(
        logits in prop::collection::vec(-20.0..20.0f64, 2..6),
        fuzz in 0.01..10.0f64,
        shift in -50.0..50.0f64,
    ) {
        let p = fuzzy_softmax(&logits, fuzz).unwrap();
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(p.iter().all(|&x| (0.0..=1.0).contains(&x)));
        let shifted: Vec<f64> = logits.iter().map(|x| x + shift).collect();
        for (a, b) in p.iter().zip(fuzzy_softmax(&shifted, fuzz).unwrap()) {
            prop_assert!((a - b).abs() < 1e-12);
        }
        for (a, b) in fuzzy_softmax(&logits, 1.0).unwrap().iter().zip(softmax(&logits)) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn fuzziness_derivative_matches_finite_differences(
        logits in prop::collection::vec(-3.0..3.0f64, 2..5),
        fuzz in 0.2..4.0f64,
    ) {
        // d p_i / d phi = p_i (z_i - sum_j p_j z_j)
        let p = fuzzy_softmax(&logits, fuzz).unwrap();
        let mean_z: f64 = p.iter().zip(&logits).map(|(a, z)| a * z).sum();
        let h = 1e-6;
        let up = fuzzy_softmax(&logits, fuzz + h).unwrap();
        let down = fuzzy_softmax(&logits, fuzz - h).unwrap();
        for i in 0..p.len() {
            let analytic = p[i] * (logits[i] - mean_z);
            let numeric = (up[i] - down[i]) / (2.0 * h);
            let scale = analytic.abs().max(numeric.abs()).max(1e-6);
            prop_assert!((analytic - numeric).abs() / scale < 1e-4, "{analytic} vs {numeric}");
        }
    }
}

#[test]
fn fuzzy_softmax_rejects_bad_inputs() {
    assert!(fuzzy_softmax(&[1.0, 2.0], 0.0).is_err());
    assert!(fuzzy_softmax(&[1.0, 2.0], -1.0).is_err());
    assert!(fuzzy_softmax(&[1.0, 2.0], f64::NAN).is_err());
    assert!(fuzzy_softmax(&[f64::INFINITY, 2.0], 1.0).is_err());
    let sharp = fuzzy_softmax(&[1.0, 0.0], 50.0).unwrap();
    assert!(sharp[0] > 1.0 - 1e-12);
}

fn toy_spec() -> NetworkSpec {
    NetworkSpec {
        input_shape: [1, 6, 6],
        layers: vec![
            LayerSpec::Conv2D { out_channels: 3, kernel_size: 3, stride: 1 },
            LayerSpec::ReLU,
            LayerSpec::GlobalAvgPool,
            LayerSpec::Dense { out_dim: 2 },
            LayerSpec::Softmax,
        ],
    }
}

fn data(n: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let labels: Vec<u8> = (0..n).map(|i| (i % 2) as u8).collect();
    let inputs = (0..n * 36).map(|k| rng.random_range(0.0..0.6) + 0.4 * labels[k / 36] as f64).collect();
    Dataset::new(36, inputs, labels).unwrap()
}

fn constituents(seeds: &[u64]) -> Vec<(NetworkSpec, WeightSet)> {
    seeds.iter().map(|&s| (toy_spec(), cold_init(&toy_spec(), s).unwrap())).collect()
}

fn cfg() -> TrainConfig {
    TrainConfig { learning_rate: 0.01, batch_size: 8, max_epochs: 5, patience: 5, rng_seed: 2, ..TrainConfig::default() }
}

#[test]
fn constituents_stay_frozen() {
    let parts = constituents(&[1, 2, 3]);
    let before: Vec<String> = parts.iter().map(|(_, w)| serde_json::to_string(w).unwrap()).collect();
    let spec = AgelfsSpec::new(parts, 7).unwrap();
    assert_eq!(spec.attention_dim, 9);
    let (model, result) = train_agelfs(spec, &data(40, 1), &data(20, 2), &cfg()).unwrap();
    let after: Vec<String> = model.spec.constituents.iter().map(|(_, w)| serde_json::to_string(w).unwrap()).collect();
    assert_eq!(before, after);
    assert_eq!(model.head, result.best.weights);
    assert!(model.fuzziness() >= FUZZINESS_FLOOR);
}

#[test]
fn training_is_deterministic() {
    let run = || {
        let spec = AgelfsSpec::new(constituents(&[4, 5]), 11).unwrap();
        train_agelfs(spec, &data(40, 3), &data(20, 4), &cfg()).unwrap()
    };
    let (a, ra) = run();
    let (b, rb) = run();
    assert_eq!(a, b);
    assert_eq!(ra, rb);
}

#[test]
fn outputs_are_probability_rows() {
    let model = AgelfsModel::init(AgelfsSpec::new(constituents(&[6, 7]), 3).unwrap()).unwrap();
    assert_eq!(model.fuzziness(), 1.0);
    let d = data(10, 5);
    let batch = TensorF::new(vec![10, 1, 6, 6], d.inputs.clone()).unwrap();
    let out = forward_agelfs(&model, &batch).unwrap();
    assert_eq!(out.shape, vec![10, 2]);
    for row in out.values.chunks(2) {
        assert!((row[0] + row[1] - 1.0).abs() < 1e-12);
    }
    let scores = model.scores_from_features(&model.features(&d).unwrap()).unwrap();
    for (s, row) in scores.iter().zip(out.values.chunks(2)) {
        assert_eq!(*s, row[1]);
    }
    let wrong = TensorF::new(vec![1, 1, 5, 5], vec![0.0; 25]).unwrap();
    assert!(forward_agelfs(&model, &wrong).is_err());
}

#[test]
fn identical_constituents_give_equal_halves() {
    let spec = AgelfsSpec::new(constituents(&[8, 8]), 0).unwrap();
    let f = extract_features(&spec, &data(12, 6)).unwrap();
    assert_eq!(f.sample_len, 6);
    for i in 0..f.len() {
        let row = f.sample(i);
        assert_eq!(row[..3], row[3..]);
    }
}

#[test]
fn constituent_count_and_geometry_are_checked() {
    assert!(AgelfsSpec::new(constituents(&[1]), 0).is_err());
    assert!(AgelfsSpec::new(constituents(&[1, 2, 3, 4]), 0).is_err());
    let mut mixed = constituents(&[1]);
    mixed.push((NetworkSpec::desk_default(), cold_init(&NetworkSpec::desk_default(), 1).unwrap()));
    assert!(AgelfsSpec::new(mixed, 0).is_err());
    let spec = AgelfsSpec::new(constituents(&[1, 2]), 0).unwrap();
    let wrong = Dataset::new(16, vec![0.0; 16], vec![0]).unwrap();
    assert!(extract_features(&spec, &wrong).is_err());
}
