//! Attention-guided ensemble with a learnable fuzzy softmax head.
//!
//! Constituent networks are frozen; each contributes its pooled backbone
//! features. The concatenation `h` is gated by feature-position attention
//! `a = softmax(A h + b)`, the attended vector `a * h` is mapped to two logits
//! by a dense layer, and the logits pass through the fuzzy softmax.
//!
//! The trainable head is stored as a [`WeightSet`] with three entries:
//! attention (`[D, D]`, `[D]`), dense (`[2, D]`, `[2]`) and the raw
//! fuzziness (`[1]`, with an unused zero bias), where fuzziness = `exp(raw)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{invalid, shape_err, Error, Result};
use crate::nn::{softmax, train_with, Network, NetworkSpec, Objective, TrainConfig, TrainResult, PROB_CLAMP};
use crate::tensor::{LayerWeights, TensorF, WeightSet};

pub const FUZZINESS_FLOOR: f64 = 1e-3;
pub const MAX_CONSTITUENTS: usize = 3;

/// `softmax(fuzziness * logits)`.
pub fn fuzzy_softmax(logits: &[f64], fuzziness: f64) -> Result<Vec<f64>> {
    if !(fuzziness > 0.0) || !fuzziness.is_finite() {
        return invalid(format!("fuzziness must be positive, got {fuzziness}"));
    }
    if logits.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numeric("non-finite logits".into()));
    }
    let scaled: Vec<f64> = logits.iter().map(|&x| fuzziness * x).collect();
    Ok(softmax(&scaled))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgelfsSpec {
    pub constituents: Vec<(NetworkSpec, WeightSet)>,
    pub attention_dim: usize,
    pub fuzziness_init: f64,
    pub head_seed: u64,
}

impl AgelfsSpec {
    pub fn new(constituents: Vec<(NetworkSpec, WeightSet)>, head_seed: u64) -> Result<Self> {
        let mut attention_dim = 0;
        for (spec, w) in &constituents {
            spec.check_weights(w)?;
            attention_dim += Network::new(spec)?.feature_len();
        }
        let out = Self { constituents, attention_dim, fuzziness_init: 1.0, head_seed };
        out.validate()?;
        Ok(out)
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.constituents.len();
        if !(2..=MAX_CONSTITUENTS).contains(&k) {
            return invalid(format!("need 2 to {MAX_CONSTITUENTS} constituents, got {k}"));
        }
        let geometry = self.constituents[0].0.input_shape;
        if self.constituents.iter().any(|(s, _)| s.input_shape != geometry) {
            return shape_err("constituents disagree on input geometry");
        }
        let mut dim = 0;
        for (spec, w) in &self.constituents {
            spec.check_weights(w)?;
            dim += Network::new(spec)?.feature_len();
        }
        if dim != self.attention_dim {
            return shape_err(format!("attention_dim {} but features total {dim}", self.attention_dim));
        }
        if !(self.fuzziness_init > 0.0) {
            return invalid("fuzziness_init must be positive");
        }
        Ok(())
    }

    pub fn input_len(&self) -> usize {
        self.constituents[0].0.input_len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgelfsModel {
    pub spec: AgelfsSpec,
    pub head: WeightSet,
}

impl AgelfsModel {
    /// Freshly initialized head: Glorot-uniform matrices, zero biases.
    pub fn init(spec: AgelfsSpec) -> Result<Self> {
        spec.validate()?;
        let d = spec.attention_dim;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.head_seed);
        let mut glorot = |rows: usize, cols: usize| {
            let limit = (6.0 / (rows + cols) as f64).sqrt();
            let v: Vec<f64> = (0..rows * cols).map(|_| rng.random_range(-limit..=limit)).collect();
            TensorF::new(vec![rows, cols], v).expect("finite")
        };
        let attention = glorot(d, d);
        let dense = glorot(2, d);
        let head = WeightSet::new(vec![
            LayerWeights { layer_index: 0, kernel: attention, bias: TensorF::zeros(vec![d]) },
            LayerWeights { layer_index: 1, kernel: dense, bias: TensorF::zeros(vec![2]) },
            LayerWeights {
                layer_index: 2,
                kernel: TensorF::new(vec![1], vec![spec.fuzziness_init.ln()])?,
                bias: TensorF::zeros(vec![1]),
            },
        ]);
        Ok(Self { spec, head })
    }

    pub fn fuzziness(&self) -> f64 {
        fuzziness_of(&self.head)
    }

    pub fn attention_weights(&self) -> (&TensorF, &TensorF) {
        (&self.head.entries[0].kernel, &self.head.entries[0].bias)
    }

    pub fn head_dense(&self) -> (&TensorF, &TensorF) {
        (&self.head.entries[1].kernel, &self.head.entries[1].bias)
    }

    /// Concatenated pooled features of every constituent.
    pub fn features(&self, data: &Dataset) -> Result<Dataset> {
        extract_features(&self.spec, data)
    }

    /// Positive-class probabilities from precomputed features.
    pub fn scores_from_features(&self, features: &Dataset) -> Result<Vec<f64>> {
        let head = AgelfsHead::new(self.spec.attention_dim);
        head.check(&self.head, features)?;
        Ok(head.positive_scores(&self.head, features))
    }
}

fn fuzziness_of(head: &WeightSet) -> f64 {
    head.entries[2].kernel.values[0].exp().max(FUZZINESS_FLOOR)
}

/// Pooled features of one frozen constituent, labels carried over.
pub fn constituent_features(spec: &NetworkSpec, weights: &WeightSet, data: &Dataset) -> Result<Dataset> {
    spec.check_weights(weights)?;
    if data.sample_len != spec.input_len() {
        return shape_err("samples do not match the constituent input geometry");
    }
    let net = Network::new(spec)?;
    let mut inputs = Vec::with_capacity(data.len() * net.feature_len());
    for i in 0..data.len() {
        inputs.extend(net.features(weights, data.sample(i)));
    }
    Dataset::new(net.feature_len(), inputs, data.labels.clone())
}

/// Row-wise concatenation of per-constituent feature sets.
pub fn concat_features(parts: &[&Dataset]) -> Result<Dataset> {
    let Some(first) = parts.first() else {
        return invalid("nothing to concatenate");
    };
    if parts.iter().any(|p| p.labels != first.labels) {
        return shape_err("feature sets cover different samples");
    }
    let width: usize = parts.iter().map(|p| p.sample_len).sum();
    let mut inputs = Vec::with_capacity(first.len() * width);
    for i in 0..first.len() {
        for p in parts {
            inputs.extend_from_slice(p.sample(i));
        }
    }
    Dataset::new(width, inputs, first.labels.clone())
}

pub fn extract_features(spec: &AgelfsSpec, data: &Dataset) -> Result<Dataset> {
    if data.sample_len != spec.input_len() {
        return shape_err("batch does not match constituent input geometry");
    }
    let parts = spec
        .constituents
        .iter()
        .map(|(s, w)| constituent_features(s, w, data))
        .collect::<Result<Vec<_>>>()?;
    concat_features(&parts.iter().collect::<Vec<_>>())
}

/// Class probabilities for a `[B, C, H, W]` batch.
pub fn forward_agelfs(model: &AgelfsModel, batch: &TensorF) -> Result<TensorF> {
    let [c, h, w] = model.spec.constituents[0].0.input_shape;
    if batch.shape.len() != 4 || batch.shape[1..] != [c, h, w] {
        return shape_err(format!("batch shape {:?} does not match input [_, {c}, {h}, {w}]", batch.shape));
    }
    let n = batch.shape[0];
    let data = Dataset::new(c * h * w, batch.values.clone(), vec![0; n])?;
    let features = extract_features(&model.spec, &data)?;
    let head = AgelfsHead::new(model.spec.attention_dim);
    head.check(&model.head, &features)?;
    let mut out = Vec::with_capacity(2 * n);
    for i in 0..n {
        out.extend(head.forward(&model.head, features.sample(i)).probs);
    }
    TensorF::new(vec![n, 2], out)
}

struct HeadPass {
    attn: Vec<f64>,
    attended: Vec<f64>,
    logits: [f64; 2],
    fuzziness: f64,
    probs: [f64; 2],
}

/// The trainable head as a training objective over feature datasets.
#[derive(Debug, Clone, Copy)]
pub struct AgelfsHead {
    dim: usize,
}

impl AgelfsHead {
    pub fn new(dim: usize) -> Self {
        Self { dim }
    }

    fn check(&self, head: &WeightSet, features: &Dataset) -> Result<()> {
        let d = self.dim;
        let expected = [(vec![d, d], vec![d]), (vec![2, d], vec![2]), (vec![1], vec![1])];
        let ok = head.entries.len() == 3
            && head.entries.iter().zip(&expected).all(|(e, (k, b))| &e.kernel.shape == k && &e.bias.shape == b);
        if !ok {
            return shape_err(format!("head weights do not match feature dimension {d}"));
        }
        if features.sample_len != d {
            return shape_err(format!("features have width {}, head expects {d}", features.sample_len));
        }
        Ok(())
    }

    fn forward(&self, head: &WeightSet, h: &[f64]) -> HeadPass {
        let d = self.dim;
        let (a_mat, a_bias) = (&head.entries[0].kernel.values, &head.entries[0].bias.values);
        let (w_mat, w_bias) = (&head.entries[1].kernel.values, &head.entries[1].bias.values);
        let pre: Vec<f64> = (0..d)
            .map(|i| a_bias[i] + a_mat[i * d..(i + 1) * d].iter().zip(h).map(|(a, x)| a * x).sum::<f64>())
            .collect();
        let attn = softmax(&pre);
        let attended: Vec<f64> = attn.iter().zip(h).map(|(a, x)| a * x).collect();
        let mut logits = [0.0; 2];
        for (c, l) in logits.iter_mut().enumerate() {
            *l = w_bias[c] + w_mat[c * d..(c + 1) * d].iter().zip(&attended).map(|(w, u)| w * u).sum::<f64>();
        }
        let fuzziness = fuzziness_of(head);
        let p = softmax(&[fuzziness * logits[0], fuzziness * logits[1]]);
        HeadPass { attn, attended, logits, fuzziness, probs: [p[0], p[1]] }
    }

    fn sample_loss(&self, pass: &HeadPass, label: u8) -> f64 {
        -pass.probs[label as usize].clamp(PROB_CLAMP, 1.0 - PROB_CLAMP).ln()
    }
}

impl Objective for AgelfsHead {
    fn batch_loss_grad(&self, head: &WeightSet, data: &Dataset, idx: &[usize], grads: &mut WeightSet) -> f64 {
        let d = self.dim;
        let scale = 1.0 / idx.len() as f64;
        let raw = head.entries[2].kernel.values[0];
        let unclamped = raw.exp() >= FUZZINESS_FLOOR;
        let w_mat = &head.entries[1].kernel.values;
        let mut loss = 0.0;
        let mut d_attended = vec![0.0; d];
        for &i in idx {
            let h = data.sample(i);
            let label = data.labels[i] as usize;
            let pass = self.forward(head, h);
            loss += self.sample_loss(&pass, data.labels[i]);
            // d loss / d (fuzziness * logits); zero where the probability clamp is active
            let p_true = pass.probs[label];
            let active = (PROB_CLAMP..=1.0 - PROB_CLAMP).contains(&p_true);
            let g: [f64; 2] = if active {
                std::array::from_fn(|c| (pass.probs[c] - f64::from(c == label)) * scale)
            } else {
                [0.0; 2]
            };
            let dz = [pass.fuzziness * g[0], pass.fuzziness * g[1]];
            if unclamped {
                grads.entries[2].kernel.values[0] +=
                    (g[0] * pass.logits[0] + g[1] * pass.logits[1]) * pass.fuzziness;
            }
            {
                let dense = &mut grads.entries[1];
                for c in 0..2 {
                    dense.bias.values[c] += dz[c];
                    for (gw, u) in dense.kernel.values[c * d..(c + 1) * d].iter_mut().zip(&pass.attended) {
                        *gw += dz[c] * u;
                    }
                }
            }
            for j in 0..d {
                d_attended[j] = (dz[0] * w_mat[j] + dz[1] * w_mat[d + j]) * h[j];
            }
            let dot: f64 = pass.attn.iter().zip(&d_attended).map(|(a, g)| a * g).sum();
            let attention = &mut grads.entries[0];
            for r in 0..d {
                let ds = pass.attn[r] * (d_attended[r] - dot);
                if ds == 0.0 {
                    continue;
                }
                attention.bias.values[r] += ds;
                for (ga, x) in attention.kernel.values[r * d..(r + 1) * d].iter_mut().zip(h) {
                    *ga += ds * x;
                }
            }
        }
        loss * scale
    }

    fn mean_loss(&self, head: &WeightSet, data: &Dataset) -> f64 {
        let total: f64 = (0..data.len())
            .map(|i| self.sample_loss(&self.forward(head, data.sample(i)), data.labels[i]))
            .sum();
        total / data.len() as f64
    }

    fn positive_scores(&self, head: &WeightSet, data: &Dataset) -> Vec<f64> {
        (0..data.len()).map(|i| self.forward(head, data.sample(i)).probs[1]).collect()
    }
}

/// Trains the head on precomputed concatenated features.
pub fn train_agelfs_on_features(
    spec: AgelfsSpec,
    train_features: &Dataset,
    val_features: &Dataset,
    config: &TrainConfig,
) -> Result<(AgelfsModel, TrainResult)> {
    let init = AgelfsModel::init(spec)?;
    let head = AgelfsHead::new(init.spec.attention_dim);
    head.check(&init.head, train_features)?;
    head.check(&init.head, val_features)?;
    let result = train_with(&head, &init.head, train_features, val_features, config)?;
    let model = AgelfsModel { spec: init.spec, head: result.best.weights.clone() };
    Ok((model, result))
}

/// Builds features through the frozen constituents and trains the head.
pub fn train_agelfs(
    spec: AgelfsSpec,
    train_set: &Dataset,
    val_set: &Dataset,
    config: &TrainConfig,
) -> Result<(AgelfsModel, TrainResult)> {
    let train_features = extract_features(&spec, train_set)?;
    let val_features = extract_features(&spec, val_set)?;
    train_agelfs_on_features(spec, &train_features, &val_features, config)
}
