//! Mini-batch training loop behaviour.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use weightmix_core::init::cold_init;
use weightmix_core::nn::{adam_step, train, AdamState, LayerSpec, NetworkSpec, TrainConfig};
use weightmix_core::{Dataset, LayerWeights, TensorF, WeightSet};

fn spec() -> NetworkSpec {
    NetworkSpec {
        input_shape: [1, 4, 4],
        layers: vec![
            LayerSpec::Conv2D { out_channels: 2, kernel_size: 3, stride: 1 },
            LayerSpec::ReLU,
            LayerSpec::GlobalAvgPool,
            LayerSpec::Dense { out_dim: 2 },
            LayerSpec::Softmax,
        ],
    }
}

/// Two Gaussian blobs in pixel space: class 1 is brighter.
fn blobs(n: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut inputs = Vec::new();
    let mut labels = Vec::new();
    for i in 0..n {
        let label = (i % 2) as u8;
        let centre = if label == 1 { 0.8 } else { 0.2 };
        inputs.extend((0..16).map(|_| centre + 0.05 * rng.random_range(-1.0..1.0)));
        labels.push(label);
    }
    Dataset::new(16, inputs, labels).unwrap()
}

fn cfg(max_epochs: usize, patience: usize) -> TrainConfig {
    TrainConfig { max_epochs, patience, rng_seed: 4, learning_rate: 0.02, batch_size: 8, ..TrainConfig::default() }
}

#[test]
fn separable_blobs_are_learned() {
    let (tr, val) = (blobs(64, 1), blobs(32, 2));
    let r = train(&spec(), &cold_init(&spec(), 7).unwrap(), &tr, &val, &cfg(50, 50)).unwrap();
    assert!(r.best.val_loss < 0.1, "val loss {}", r.best.val_loss);
    assert_eq!(r.history.len(), 50);
    let best = r.history.iter().map(|h| h.val_loss).fold(f64::INFINITY, f64::min);
    assert_eq!(r.best.val_loss, best);
    assert_eq!(r.history[r.best.epoch - 1].val_loss, best);
    assert!(r.epochs_to_reach(0.5).unwrap() <= r.best.epoch);
}

#[test]
fn single_epoch_and_zero_patience() {
    let (tr, val) = (blobs(40, 3), blobs(20, 4));
    let init = cold_init(&spec(), 2).unwrap();
    let one = train(&spec(), &init, &tr, &val, &cfg(1, 4)).unwrap();
    assert_eq!((one.history.len(), one.best.epoch), (1, 1));
    // patience 0 stops at the first epoch that fails to improve
    let r = train(&spec(), &init, &tr, &val, &cfg(30, 0)).unwrap();
    let stop = r.history.len();
    assert!(stop == 30 || r.history[stop - 1].val_loss >= r.history[..stop - 1].iter().map(|h| h.val_loss).fold(f64::INFINITY, f64::min));
    assert!(r.history[..stop - 1].windows(2).all(|w| w[1].val_loss < w[0].val_loss));
}

#[test]
fn training_is_deterministic() {
    let (tr, val) = (blobs(40, 5), blobs(20, 6));
    let init = cold_init(&spec(), 9).unwrap();
    let a = train(&spec(), &init, &tr, &val, &cfg(5, 5)).unwrap();
    let b = train(&spec(), &init, &tr, &val, &cfg(5, 5)).unwrap();
    assert_eq!(a, b);
    let c = train(&spec(), &init, &tr, &val, &TrainConfig { rng_seed: 5, ..cfg(5, 5) }).unwrap();
    assert_ne!(a.history, c.history);
}

#[test]
fn bad_inputs_are_rejected() {
    let (tr, val) = (blobs(8, 1), blobs(8, 2));
    let init = cold_init(&spec(), 1).unwrap();
    assert!(train(&spec(), &init, &tr, &val, &cfg(0, 1)).is_err());
    assert!(train(&spec(), &init, &tr, &val, &TrainConfig { batch_size: 0, ..cfg(1, 1) }).is_err());
    let empty = Dataset::new(16, vec![], vec![]).unwrap();
    assert!(train(&spec(), &init, &tr, &empty, &cfg(1, 1)).is_err());
    let wrong = Dataset::new(9, vec![0.0; 9], vec![0]).unwrap();
    assert!(train(&spec(), &init, &wrong, &val, &cfg(1, 1)).is_err());
    let huge = TrainConfig { learning_rate: 1e300, ..cfg(3, 3) };
    let blown = train(&spec(), &init, &tr, &val, &huge);
    assert!(blown.is_err() || blown.unwrap().best.weights.all_finite());
}

#[test]
fn adam_matches_hand_update() {
    let mut w = WeightSet::new(vec![LayerWeights {
        layer_index: 0,
        kernel: TensorF::new(vec![2], vec![1.0, -1.0]).unwrap(),
        bias: TensorF::new(vec![1], vec![0.0]).unwrap(),
    }]);
    let mut g = w.zeros_like();
    g.entries[0].kernel.values = vec![0.3, -0.2];
    g.entries[0].bias.values = vec![0.0];
    let c = TrainConfig::default();
    let mut state = AdamState::new(&w);
    let (mut m, mut v) = ([0.0f64; 2], [0.0f64; 2]);
    let mut want = [1.0f64, -1.0];
    for t in 1..=3 {
        adam_step(&mut w, &g, &mut state, &c).unwrap();
        for i in 0..2 {
            let gi = g.entries[0].kernel.values[i];
            m[i] = 0.9 * m[i] + 0.1 * gi;
            v[i] = 0.999 * v[i] + 0.001 * gi * gi;
            let mh = m[i] / (1.0 - 0.9f64.powi(t));
            let vh = v[i] / (1.0 - 0.999f64.powi(t));
            want[i] -= c.learning_rate * mh / (vh.sqrt() + c.adam_epsilon);
        }
        for i in 0..2 {
            assert!((w.entries[0].kernel.values[i] - want[i]).abs() < 1e-12);
        }
    }
    assert_eq!(w.entries[0].bias.values[0], 0.0);
    assert_eq!(state.t, 3);
}
