//! The network forward pass against an independent straight-line evaluation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use weightmix_core::init::cold_init;
use weightmix_core::nn::{forward, loss_and_gradients, NetworkSpec};
use weightmix_core::{TensorF, WeightSet};

type Image = Vec<Vec<Vec<f64>>>; // [channel][row][col]

fn conv_same(x: &Image, kernel: &[f64], bias: &[f64], out_c: usize, k: usize) -> Image {
    let in_c = x.len();
    let (h, w) = (x[0].len(), x[0][0].len());
    let pad = (k / 2) as isize;
    let mut out = vec![vec![vec![0.0; w]; h]; out_c];
    for o in 0..out_c {
        for r in 0..h {
            for c in 0..w {
                let mut acc = bias[o];
                for i in 0..in_c {
                    for kr in 0..k {
                        for kc in 0..k {
                            let rr = r as isize + kr as isize - pad;
                            let cc = c as isize + kc as isize - pad;
                            if rr < 0 || cc < 0 || rr >= h as isize || cc >= w as isize {
                                continue;
                            }
                            let wi = ((o * in_c + i) * k + kr) * k + kc;
                            acc += kernel[wi] * x[i][rr as usize][cc as usize];
                        }
                    }
                }
                out[o][r][c] = acc;
            }
        }
    }
    out
}

fn relu(x: &mut Image) {
    x.iter_mut().flatten().flatten().for_each(|v| *v = v.max(0.0));
}

fn pool2(x: &Image) -> Image {
    x.iter()
        .map(|ch| {
            (0..ch.len() / 2)
                .map(|r| {
                    (0..ch[0].len() / 2)
                        .map(|c| {
                            let vals = [ch[2 * r][2 * c], ch[2 * r][2 * c + 1], ch[2 * r + 1][2 * c], ch[2 * r + 1][2 * c + 1]];
                            vals.into_iter().fold(f64::NEG_INFINITY, f64::max)
                        })
                        .collect()
                })
                .collect()
        })
        .collect()
}

fn oracle(weights: &WeightSet, sample: &[f64]) -> [f64; 2] {
    let x: Image = vec![(0..16).map(|r| sample[r * 16..(r + 1) * 16].to_vec()).collect()];
    let e = &weights.entries;
    let mut a = conv_same(&x, &e[0].kernel.values, &e[0].bias.values, 4, 3);
    relu(&mut a);
    let a = pool2(&a);
    let mut b = conv_same(&a, &e[1].kernel.values, &e[1].bias.values, 8, 3);
    relu(&mut b);
    let b = pool2(&b);
    let gap: Vec<f64> = b.iter().map(|ch| ch.iter().flatten().sum::<f64>() / 16.0).collect();
    let logits: Vec<f64> = (0..2)
        .map(|o| e[2].bias.values[o] + (0..8).map(|i| e[2].kernel.values[o * 8 + i] * gap[i]).sum::<f64>())
        .collect();
    let m = logits[0].max(logits[1]);
    let (z0, z1) = ((logits[0] - m).exp(), (logits[1] - m).exp());
    [z0 / (z0 + z1), z1 / (z0 + z1)]
}

fn batch(n: usize, seed: u64) -> TensorF {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    TensorF::new(vec![n, 1, 16, 16], (0..n * 256).map(|_| rng.random::<f64>()).collect()).unwrap()
}

#[test]
fn forward_matches_straight_line_oracle() {
    let spec = NetworkSpec::desk_default();
    let mut w = cold_init(&spec, 1).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for e in &mut w.entries {
        e.bias.values.iter_mut().for_each(|b| *b = rng.random_range(-0.2..0.2));
    }
    let x = batch(5, 2);
    let out = forward(&spec, &w, &x).unwrap();
    assert_eq!(out.shape, vec![5, 2]);
    for i in 0..5 {
        let want = oracle(&w, &x.values[i * 256..(i + 1) * 256]);
        for c in 0..2 {
            assert!((out.values[i * 2 + c] - want[c]).abs() < 1e-9, "sample {i} class {c}");
        }
    }
}

#[test]
fn rows_are_normalized_probabilities() {
    let spec = NetworkSpec::desk_default();
    for seed in 0..5 {
        let w = cold_init(&spec, seed).unwrap();
        let out = forward(&spec, &w, &batch(7, seed + 50)).unwrap();
        for row in out.values.chunks(2) {
            assert!((row[0] + row[1] - 1.0).abs() < 1e-9);
            assert!(row.iter().all(|p| (0.0..=1.0).contains(p)));
        }
    }
}

#[test]
fn zero_weights_give_even_odds_and_ln2_loss() {
    let spec = NetworkSpec::desk_default();
    let w = spec.zero_weights().unwrap();
    let x = batch(3, 9);
    let out = forward(&spec, &w, &x).unwrap();
    assert!(out.values.iter().all(|&p| p == 0.5));
    let y = TensorF::new(vec![3, 2], vec![1.0, 0.0, 0.0, 1.0, 1.0, 0.0]).unwrap();
    let (loss, _) = loss_and_gradients(&spec, &w, &x, &y).unwrap();
    assert!((loss - std::f64::consts::LN_2).abs() < 1e-9);
}

#[test]
fn confident_correct_prediction_has_near_zero_loss() {
    let spec = NetworkSpec::desk_default();
    let mut w = spec.zero_weights().unwrap();
    // a large bias on class 1 saturates the softmax
    w.entries[2].bias.values = vec![-40.0, 40.0];
    let x = batch(2, 4);
    let y = TensorF::new(vec![2, 2], vec![0.0, 1.0, 0.0, 1.0]).unwrap();
    let (loss, _) = loss_and_gradients(&spec, &w, &x, &y).unwrap();
    assert!(loss <= 1e-10, "loss {loss}");
}

#[test]
fn shape_errors_are_descriptive() {
    let spec = NetworkSpec::desk_default();
    let w = spec.zero_weights().unwrap();
    let bad = TensorF::new(vec![1, 1, 8, 8], vec![0.0; 64]).unwrap();
    let err = forward(&spec, &w, &bad).unwrap_err().to_string();
    assert!(err.contains("16"), "{err}");
    let y = TensorF::new(vec![1, 2], vec![0.5, 0.5]).unwrap();
    assert!(loss_and_gradients(&spec, &w, &batch(1, 0), &y).is_err());
}
